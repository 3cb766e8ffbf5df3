#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "icca/core.hpp"
#include "icca/stats.hpp"
#include "icca/util.hpp"

namespace icca {

// ---------------------------------------------------------------------------
// Function-word filtering. The stoplist covers closed-class function words
// (determiners, conjunctions, particles, interjections); pronouns, numbers,
// adpositions, and open-class words are deliberately kept.
// ---------------------------------------------------------------------------

class Stoplist {
 public:
  static Stoplist builtin() {
    static const char* kWords[] = {
        // determiners
        "the", "a", "an", "this", "that", "these", "those", "some", "any", "each", "every",
        "either", "neither", "no", "another", "such",
        // coordinating conjunctions
        "and", "or", "but", "nor", "so", "yet",
        // subordinating conjunctions
        "because", "although", "though", "while", "whereas", "unless", "until", "if",
        "whether", "since",
        // particles
        "to", "not",
        // interjections
        "oh", "ah", "hey", "hmm", "umm", "uh", "um", "wow", "oops", "yeah", "ok", "okay",
    };
    Stoplist s;
    for (const char* w : kWords) s.words_.insert(w);
    return s;
  }

  // One word per line; blank lines and #-comments ignored.
  static Stoplist load_file(const std::filesystem::path& path) {
    Stoplist s;
    std::string content = read_text_file(path);
    for (const std::string& line : split_lines(content)) {
      std::string_view w = trim(line);
      if (w.empty() || w.front() == '#') continue;
      s.words_.insert(to_lower(w));
    }
    if (s.words_.empty()) throw ConfigError("stoplist file is empty: " + path.string());
    return s;
  }

  bool contains(const std::string& word) const { return words_.count(word) > 0; }
  std::size_t size() const { return words_.size(); }

 private:
  std::set<std::string> words_;
};

struct FilteredMessage {
  std::string original;
  std::vector<std::string> tokens;
};

// Lowercase, strip ASCII punctuation, split on whitespace, drop stoplist
// words. Tokens that are pure punctuation vanish.
inline FilteredMessage filter_tokens(const std::string& message, const Stoplist& stoplist) {
  FilteredMessage out;
  out.original = message;
  for (const std::string& raw : split_whitespace(message)) {
    std::string token;
    for (char c : raw) {
      unsigned char uc = static_cast<unsigned char>(c);
      if (std::ispunct(uc)) continue;
      token.push_back(static_cast<char>(std::tolower(uc)));
    }
    if (token.empty() || stoplist.contains(token)) continue;
    out.tokens.push_back(std::move(token));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Word novelty. An edit alignment between the previous (reference) and the
// current (hypothesis) message where deletions are free: the cost is the
// minimal number of insertions + substitutions, i.e. how many hypothesis
// tokens cannot be carried over from the reference in order.
// ---------------------------------------------------------------------------

inline long wnd(const FilteredMessage& reference, const FilteredMessage& hypothesis) {
  const auto& ref = reference.tokens;
  const auto& hyp = hypothesis.tokens;
  std::vector<long> row(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) row[j] = static_cast<long>(j);  // insertions
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    long diag = row[0];
    row[0] = 0;  // deletions are free
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      long sub = diag + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      long del = row[j];      // drop ref[i-1], cost 0
      long ins = row[j - 1] + 1;  // add hyp[j-1]
      diag = row[j];
      row[j] = std::min({sub, del, ins});
    }
  }
  return row[hyp.size()];
}

// Normalized by reference length; undefined (nullopt) for empty references.
inline std::optional<double> wnr(const FilteredMessage& reference,
                                 const FilteredMessage& hypothesis) {
  if (reference.tokens.empty()) return std::nullopt;
  return static_cast<double>(wnd(reference, hypothesis)) /
         static_cast<double>(reference.tokens.size());
}

// ---------------------------------------------------------------------------
// Word vectors (GloVe text format: word then D floats per line).
// ---------------------------------------------------------------------------

class VectorTable {
 public:
  static VectorTable load_file(const std::filesystem::path& path) {
    VectorTable t;
    std::string content = read_text_file(path);
    std::vector<std::string> lines = split_lines(content);
    int line_no = 0;
    for (const std::string& line : lines) {
      ++line_no;
      if (trim(line).empty()) continue;
      std::istringstream in(line);
      std::string word;
      in >> word;
      std::vector<float> vec;
      double v = 0.0;
      while (in >> v) vec.push_back(static_cast<float>(v));
      if (word.empty() || vec.empty()) {
        throw LoadError(path.string() + ":" + std::to_string(line_no) + ": malformed vector line");
      }
      if (t.dimension_ == 0) {
        t.dimension_ = static_cast<int>(vec.size());
      } else if (static_cast<int>(vec.size()) != t.dimension_) {
        throw LoadError(path.string() + ":" + std::to_string(line_no) + ": dimension " +
                        std::to_string(vec.size()) + " != " + std::to_string(t.dimension_));
      }
      t.vectors_.emplace(std::move(word), std::move(vec));
    }
    return t;
  }

  void insert(std::string word, std::vector<float> vec) {
    if (dimension_ == 0) dimension_ = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != dimension_) {
      throw ContractError("vector dimension mismatch on insert");
    }
    vectors_.emplace(std::move(word), std::move(vec));
  }

  const std::vector<float>* lookup(const std::string& word) const {
    auto it = vectors_.find(word);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  int dimension() const { return dimension_; }
  std::size_t size() const { return vectors_.size(); }

 private:
  int dimension_ = 0;
  std::map<std::string, std::vector<float>> vectors_;
};

// Cosine of the two messages' mean in-vocabulary vectors; undefined when a
// side has no in-vocabulary tokens or a zero-norm mean.
inline std::optional<double> embedding_similarity(const FilteredMessage& a,
                                                  const FilteredMessage& b,
                                                  const VectorTable& vectors) {
  auto mean_vector = [&](const FilteredMessage& m) -> std::optional<std::vector<double>> {
    std::vector<double> sum(static_cast<std::size_t>(vectors.dimension()), 0.0);
    int hits = 0;
    for (const std::string& tok : m.tokens) {
      const std::vector<float>* v = vectors.lookup(tok);
      if (v == nullptr) continue;
      for (std::size_t d = 0; d < v->size(); ++d) sum[d] += (*v)[d];
      ++hits;
    }
    if (hits == 0) return std::nullopt;
    for (double& x : sum) x /= hits;
    return sum;
  };
  auto va = mean_vector(a);
  auto vb = mean_vector(b);
  if (!va || !vb) return std::nullopt;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t d = 0; d < va->size(); ++d) {
    dot += (*va)[d] * (*vb)[d];
    na += (*va)[d] * (*va)[d];
    nb += (*vb)[d] * (*vb)[d];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Per-repetition aggregation.
// ---------------------------------------------------------------------------

enum class Metric { Length, Accuracy, Wnr, Wnd, Similarity };

inline const char* metric_name(Metric m) {
  switch (m) {
    case Metric::Length: return "length";
    case Metric::Accuracy: return "accuracy";
    case Metric::Wnr: return "wnr";
    case Metric::Wnd: return "wnd";
    case Metric::Similarity: return "similarity";
  }
  return "?";
}

inline Metric metric_from_name(std::string_view name) {
  for (Metric m : {Metric::Length, Metric::Accuracy, Metric::Wnr, Metric::Wnd,
                   Metric::Similarity}) {
    if (name == metric_name(m)) return m;
  }
  throw ConfigError("unknown metric: " + std::string(name));
}

constexpr bool is_pair_metric(Metric m) {
  return m == Metric::Wnr || m == Metric::Wnd || m == Metric::Similarity;
}

struct MetricOptions {
  Stoplist stoplist = Stoplist::builtin();
  const VectorTable* vectors = nullptr;  // required for Similarity
  BootstrapSpec bootstrap;
  // Message-length tokenizer; defaults to raw whitespace token count.
  std::function<long(const std::string&)> length_tokenizer;
};

struct MetricSeries {
  std::string metric;
  std::vector<int> repetitions;       // 1..6, or 2..6 for pair metrics
  std::vector<double> mean;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::vector<int> n;                 // contributing interactions per repetition
  std::vector<long> excluded_pairs;   // undefined pairs per repetition
};

namespace detail {

// Per-interaction value for one repetition, or nullopt when nothing in that
// repetition is defined. `excluded` counts undefined pairs.
inline std::optional<double> interaction_repetition_value(const Interaction& in, Metric metric,
                                                          int rep, const MetricOptions& options,
                                                          long& excluded) {
  if (!is_pair_metric(metric)) {
    double sum = 0.0;
    int count = 0;
    for (const TrialRecord& t : in.trials) {
      if (t.repetition != rep) continue;
      if (metric == Metric::Accuracy) {
        sum += t.correct ? 1.0 : 0.0;
      } else {
        long len = options.length_tokenizer
                       ? options.length_tokenizer(t.message)
                       : static_cast<long>(split_whitespace(t.message).size());
        sum += static_cast<double>(len);
      }
      ++count;
    }
    if (count == 0) return std::nullopt;
    return sum / count;
  }

  // Pair metrics compare each image's message to the same image's message in
  // the previous repetition.
  std::map<std::string, const std::string*> prev, cur;
  for (const TrialRecord& t : in.trials) {
    if (t.repetition == rep - 1) prev[t.target_id] = &t.message;
    if (t.repetition == rep) cur[t.target_id] = &t.message;
  }
  double sum = 0.0;
  int count = 0;
  for (const auto& [id, msg] : cur) {
    auto it = prev.find(id);
    if (it == prev.end()) {
      ++excluded;
      continue;
    }
    FilteredMessage ref = filter_tokens(*it->second, options.stoplist);
    FilteredMessage hyp = filter_tokens(*msg, options.stoplist);
    std::optional<double> value;
    switch (metric) {
      case Metric::Wnr:
        value = wnr(ref, hyp);
        break;
      case Metric::Wnd:
        value = static_cast<double>(wnd(ref, hyp));
        break;
      case Metric::Similarity:
        if (options.vectors == nullptr) {
          throw ConfigError("similarity metric requires a word-vector table");
        }
        value = embedding_similarity(ref, hyp, *options.vectors);
        break;
      default:
        break;
    }
    if (!value) {
      ++excluded;
      continue;
    }
    sum += *value;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

}  // namespace detail

inline MetricSeries per_repetition(Metric metric, std::span<const Interaction> interactions,
                                   const MetricOptions& options) {
  if (interactions.empty()) throw ContractError("per_repetition: no interactions");
  MetricSeries out;
  out.metric = metric_name(metric);
  int first_rep = is_pair_metric(metric) ? 2 : 1;
  for (int rep = first_rep; rep <= kRepetitions; ++rep) {
    std::vector<double> values;
    long excluded = 0;
    for (const Interaction& in : interactions) {
      auto v = detail::interaction_repetition_value(in, metric, rep, options, excluded);
      if (v) values.push_back(*v);
    }
    out.repetitions.push_back(rep);
    out.n.push_back(static_cast<int>(values.size()));
    out.excluded_pairs.push_back(excluded);
    if (values.empty()) {
      out.mean.push_back(0.0);
      out.ci_low.push_back(0.0);
      out.ci_high.push_back(0.0);
      continue;
    }
    BootstrapSpec spec = options.bootstrap;
    spec.seed = derive_seed(options.bootstrap.seed, out.metric, static_cast<std::uint64_t>(rep),
                            seed_purpose::kBootstrap);
    BootstrapResult ci = bootstrap_ci(values, spec);
    out.mean.push_back(ci.mean);
    out.ci_low.push_back(ci.low);
    out.ci_high.push_back(ci.high);
  }
  return out;
}

// CSV with one row per (metric, repetition), stable formatting.
inline std::string metrics_to_csv(std::span<const MetricSeries> series) {
  std::string out = "metric,repetition,mean,ci_low,ci_high,n,excluded_pairs\n";
  for (const MetricSeries& s : series) {
    for (std::size_t i = 0; i < s.repetitions.size(); ++i) {
      out += s.metric;
      out += ',';
      out += std::to_string(s.repetitions[i]);
      out += ',';
      out += s.n[i] > 0 ? format_double(s.mean[i]) : "";
      out += ',';
      out += s.n[i] > 0 ? format_double(s.ci_low[i]) : "";
      out += ',';
      out += s.n[i] > 0 ? format_double(s.ci_high[i]) : "";
      out += ',';
      out += std::to_string(s.n[i]);
      out += ',';
      out += std::to_string(s.excluded_pairs[i]);
      out += '\n';
    }
  }
  return out;
}

}  // namespace icca
