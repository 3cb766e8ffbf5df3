// Command-line harness: configure runs, execute batches, compute metrics,
// render reports, and manage corpora.
//
// Exit codes: 0 success, 1 partial results, 2 usage or configuration error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icca/icca.hpp"

namespace fs = std::filesystem;
using icca::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Keyed configuration: a flat `key = value` text file, overridden by --set
// pairs and then by dedicated command-line flags. Unknown keys are rejected
// against each command's key list. The resolved form is written as JSON next
// to the outputs so a run can be reproduced from its artifacts.
// ---------------------------------------------------------------------------

class KVConfig {
 public:
  static KVConfig from_file(const fs::path& path) {
    KVConfig kv;
    std::string content = icca::read_text_file(path);
    int line_no = 0;
    for (const std::string& raw : icca::split_lines(content)) {
      ++line_no;
      std::string line = strip_comment(raw);
      std::string_view t = icca::trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string_view::npos) {
        throw icca::ConfigError(path.string() + ":" + std::to_string(line_no) +
                                ": expected key = value");
      }
      std::string key(icca::trim(t.substr(0, eq)));
      std::string value = unquote(icca::trim(t.substr(eq + 1)));
      if (key.empty()) {
        throw icca::ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
      }
      kv.values_[key] = value;
    }
    return kv;
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  void apply_set_pair(const std::string& pair) {
    auto eq = pair.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw icca::ConfigError("--set expects key=value, got '" + pair + "'");
    }
    values_[std::string(icca::trim(pair.substr(0, eq)))] =
        unquote(icca::trim(pair.substr(eq + 1)));
  }

  void require_known(const std::set<std::string>& known) const {
    for (const auto& [key, value] : values_) {
      if (known.count(key) == 0) {
        std::string msg = "unknown configuration key '" + key + "'; known keys:";
        for (const auto& k : known) msg += " " + k;
        throw icca::ConfigError(msg);
      }
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  long get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw icca::ConfigError("key '" + key + "' expects an integer, got '" + it->second + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw icca::ConfigError("key '" + key + "' expects a number, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string v = icca::to_lower(it->second);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw icca::ConfigError("key '" + key + "' expects a boolean, got '" + it->second + "'");
  }

  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      unsigned long long v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw icca::ConfigError("key '" + key + "' expects an unsigned integer, got '" +
                              it->second + "'");
    }
  }

  // Typed-where-possible snapshot; std::map keeps the key order stable.
  ordered_json to_json() const {
    ordered_json j = ordered_json::object();
    for (const auto& [key, value] : values_) {
      std::string lower = icca::to_lower(value);
      if (lower == "true" || lower == "false") {
        j[key] = lower == "true";
        continue;
      }
      try {
        std::size_t pos = 0;
        long iv = std::stol(value, &pos);
        if (pos == value.size()) {
          j[key] = iv;
          continue;
        }
      } catch (const std::exception&) {
      }
      try {
        std::size_t pos = 0;
        double dv = std::stod(value, &pos);
        if (pos == value.size()) {
          j[key] = dv;
          continue;
        }
      } catch (const std::exception&) {
      }
      j[key] = value;
    }
    return j;
  }

 private:
  static std::string strip_comment(const std::string& line) {
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quotes = !in_quotes;
      if (line[i] == '#' && !in_quotes) return line.substr(0, i);
    }
    return line;
  }

  static std::string unquote(std::string_view v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
      std::string out;
      for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == '\\' && i + 2 < v.size() && (v[i + 1] == '"' || v[i + 1] == '\\')) {
          out += v[i + 1];
          ++i;
        } else {
          out += v[i];
        }
      }
      return out;
    }
    return std::string(v);
  }

  std::map<std::string, std::string> values_;
};

void write_snapshot(const fs::path& out_dir, const std::string& command, const KVConfig& kv) {
  ordered_json snap;
  snap["command"] = command;
  snap["config"] = kv.to_json();
  icca::write_text_file(out_dir / "config.snapshot.json", snap.dump(2) + "\n");
}

// Interactions for run/repeat-test: a corpus manifest when given, otherwise
// generated fixtures.
std::vector<icca::Interaction> gather_interactions(const KVConfig& kv, bool verbose) {
  std::vector<icca::Interaction> interactions;
  if (kv.has("corpus")) {
    icca::LoadReport report = icca::load_corpus(kv.get_string("corpus"));
    for (const std::string& err : report.errors) {
      std::cerr << "corpus: rejected " << err << "\n";
    }
    if (verbose) {
      std::cout << "corpus: loaded " << report.interactions.size() << " interaction(s), rejected "
                << report.errors.size() << "\n";
    }
    interactions = std::move(report.interactions);
  } else {
    long count = kv.get_int("synthetic.count", 1);
    if (count < 1) throw icca::ConfigError("synthetic.count must be >= 1");
    icca::SyntheticProfile profile =
        icca::synthetic_profile_from_name(kv.get_string("synthetic.profile", "converging"));
    std::uint64_t base = kv.get_seed("synthetic.seed", 1);
    for (long i = 0; i < count; ++i) {
      interactions.push_back(icca::generate_synthetic(base + static_cast<std::uint64_t>(i), profile));
    }
  }
  if (interactions.empty()) {
    throw icca::ConfigError("no usable interactions (corpus empty or fully rejected)");
  }
  return interactions;
}

icca::TemplateSet templates_from(const KVConfig& kv) {
  if (kv.has("templates")) return icca::TemplateSet::load_dir(kv.get_string("templates"));
  return icca::TemplateSet::builtin();
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

int cmd_run(const KVConfig& kv, bool verbose) {
  static const std::set<std::string> kKeys = {
      "variant",   "speaker",        "listener",          "corpus",        "synthetic.count",
      "synthetic.profile", "synthetic.seed", "seed",      "out",           "merge_grid",
      "jobs",      "resume",         "templates",         "temperature",   "max_words"};
  kv.require_known(kKeys);

  std::string variant_name = kv.get_string("variant");
  if (variant_name.empty()) throw icca::ConfigError("run needs a variant (e.g. --variant L3)");
  icca::find_variant(variant_name);  // fail fast on unknown names

  fs::path out_dir = kv.get_string("out", "out");
  fs::create_directories(out_dir / "transcripts");
  write_snapshot(out_dir, "run", kv);

  icca::TemplateSet templates = templates_from(kv);
  std::vector<icca::Interaction> sources = gather_interactions(kv, verbose);

  std::vector<icca::RunConfig> configs;
  configs.reserve(sources.size());
  for (icca::Interaction& in : sources) {
    icca::RunConfig cfg;
    cfg.variant = variant_name;
    cfg.speaker_spec = kv.get_string("speaker", "replay");
    cfg.listener_spec = kv.get_string("listener", "scripted:perfect");
    cfg.master_seed = kv.get_seed("seed", 0);
    cfg.merge_context_grid = kv.get_bool("merge_grid", false);
    cfg.resume = kv.get_bool("resume", false);
    cfg.decode.temperature = kv.get_double("temperature", 0.0);
    cfg.decode.max_words_hint = static_cast<int>(kv.get_int("max_words", 20));
    cfg.templates = templates;
    cfg.source = std::move(in);
    cfg.output_path = out_dir / "transcripts" / (cfg.run_id() + ".jsonl");
    configs.push_back(std::move(cfg));
  }

  int jobs = static_cast<int>(kv.get_int("jobs", 1));
  std::vector<icca::Transcript> results =
      icca::run_batch(std::span<const icca::RunConfig>(configs), jobs);

  ordered_json manifest;
  manifest["runs"] = ordered_json::array();
  int n_complete = 0, n_partial = 0, n_refused = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const icca::Transcript& tr = results[i];
    switch (tr.status) {
      case icca::RunStatus::Complete: ++n_complete; break;
      case icca::RunStatus::Partial: ++n_partial; break;
      case icca::RunStatus::Refused: ++n_refused; break;
    }
    ordered_json r;
    r["run_id"] = tr.run_id;
    r["interaction_id"] = tr.interaction.id;
    r["variant"] = tr.variant;
    r["status"] = icca::to_string(tr.status);
    r["transcript"] = (fs::path("transcripts") / (tr.run_id + ".jsonl")).string();
    r["trials"] = tr.interaction.trials.size();
    r["error"] = tr.error;
    manifest["runs"].push_back(std::move(r));

    std::cout << tr.run_id << ": " << icca::to_string(tr.status);
    if (tr.status == icca::RunStatus::Complete) {
      std::cout << " (" << tr.interaction.trials.size() << " trials)";
    } else {
      std::cout << " — " << tr.error;
    }
    std::cout << "\n";
    if (verbose) {
      for (const std::string& e : tr.trial_errors) std::cout << "  note: " << e << "\n";
    }
  }
  manifest["counts"] = {{"complete", n_complete}, {"partial", n_partial}, {"refused", n_refused}};
  icca::write_text_file(out_dir / "run_manifest.json", manifest.dump(2) + "\n");

  std::cout << n_complete << " complete, " << n_partial << " partial, " << n_refused
            << " refused\n";
  if (n_refused > 0) return 2;
  return n_partial > 0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

int cmd_score(const KVConfig& kv, bool verbose) {
  static const std::set<std::string> kKeys = {"transcripts", "out",  "stoplist", "vectors",
                                              "resamples",   "confidence", "seed"};
  kv.require_known(kKeys);

  fs::path dir = kv.get_string("transcripts");
  if (dir.empty()) throw icca::ConfigError("score needs --transcripts DIR");
  if (!fs::is_directory(dir)) throw icca::ConfigError("not a directory: " + dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<icca::Interaction> interactions;
  int skipped = 0;
  for (const fs::path& f : files) {
    icca::Transcript tr = icca::read_transcript(f);
    if (tr.status != icca::RunStatus::Complete) {
      std::cerr << "score: skipping " << f.filename().string() << " (status "
                << icca::to_string(tr.status) << ")\n";
      ++skipped;
      continue;
    }
    interactions.push_back(std::move(tr.interaction));
  }
  if (interactions.empty()) {
    throw icca::ConfigError("no complete transcripts under " + dir.string());
  }
  if (verbose) {
    std::cout << "score: " << interactions.size() << " transcript(s), " << skipped
              << " skipped\n";
  }

  icca::MetricOptions opts;
  if (kv.has("stoplist")) opts.stoplist = icca::Stoplist::load_file(kv.get_string("stoplist"));
  icca::VectorTable vectors;
  if (kv.has("vectors")) {
    vectors = icca::VectorTable::load_file(kv.get_string("vectors"));
    opts.vectors = &vectors;
  }
  opts.bootstrap.resamples = static_cast<int>(kv.get_int("resamples", 10000));
  opts.bootstrap.confidence = kv.get_double("confidence", 0.95);
  opts.bootstrap.seed = kv.get_seed("seed", 0);

  std::vector<icca::MetricSeries> series;
  for (icca::Metric m : {icca::Metric::Length, icca::Metric::Accuracy, icca::Metric::Wnr,
                         icca::Metric::Wnd, icca::Metric::Similarity}) {
    if (m == icca::Metric::Similarity && opts.vectors == nullptr) {
      // Keep the series present so downstream readers see all five; without
      // vectors every repetition is simply empty.
      icca::MetricSeries empty;
      empty.metric = icca::metric_name(m);
      for (int rep = 2; rep <= icca::kRepetitions; ++rep) {
        empty.repetitions.push_back(rep);
        empty.mean.push_back(0.0);
        empty.ci_low.push_back(0.0);
        empty.ci_high.push_back(0.0);
        empty.n.push_back(0);
        empty.excluded_pairs.push_back(0);
      }
      series.push_back(std::move(empty));
      std::cerr << "score: no word-vector table given; similarity left empty\n";
      continue;
    }
    series.push_back(icca::per_repetition(m, interactions, opts));
  }

  fs::path out_dir = kv.get_string("out", "out");
  fs::create_directories(out_dir);
  write_snapshot(out_dir, "score", kv);
  icca::write_text_file(out_dir / "metrics.csv",
                        icca::metrics_to_csv(std::span<const icca::MetricSeries>(series)));

  ordered_json stats;
  stats["interactions"] = interactions.size();
  stats["skipped_transcripts"] = skipped;
  stats["bootstrap"] = {{"resamples", opts.bootstrap.resamples},
                        {"confidence", opts.bootstrap.confidence},
                        {"seed", opts.bootstrap.seed}};
  stats["metrics"] = ordered_json::object();
  for (const icca::MetricSeries& s : series) {
    ordered_json m;
    m["repetitions"] = s.repetitions;
    m["mean"] = s.mean;
    m["ci_low"] = s.ci_low;
    m["ci_high"] = s.ci_high;
    m["n"] = s.n;
    m["excluded_pairs"] = s.excluded_pairs;
    stats["metrics"][s.metric] = std::move(m);
  }
  icca::write_text_file(out_dir / "stats.json", stats.dump(2) + "\n");

  std::cout << "wrote " << (out_dir / "metrics.csv").string() << " and "
            << (out_dir / "stats.json").string() << " (" << interactions.size()
            << " interactions)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& csvs, const KVConfig& kv, bool /*verbose*/) {
  static const std::set<std::string> kKeys = {"out"};
  kv.require_known(kKeys);
  if (csvs.empty()) throw icca::ConfigError("report needs at least one --csv FILE");

  std::vector<icca::MetricsFile> files;
  files.reserve(csvs.size());
  for (const std::string& c : csvs) files.push_back(icca::read_metrics_csv(c));

  fs::path out_dir = kv.get_string("out", "out");
  fs::create_directories(out_dir);
  write_snapshot(out_dir, "report", kv);

  for (icca::Metric m : {icca::Metric::Length, icca::Metric::Accuracy, icca::Metric::Wnr,
                         icca::Metric::Wnd, icca::Metric::Similarity}) {
    std::vector<icca::NamedSeries> series;
    for (const icca::MetricsFile& f : files) {
      auto it = f.series.find(m);
      if (it != f.series.end()) series.push_back(it->second);
    }
    if (series.empty()) continue;
    icca::ChartResult chart =
        icca::render_metric_chart(m, std::span<const icca::NamedSeries>(series));
    for (const std::string& w : chart.warnings) std::cerr << "report: " << w << "\n";
    fs::path svg = out_dir / (std::string("chart_") + icca::metric_name(m) + ".svg");
    icca::write_text_file(svg, chart.svg);
    std::cout << "wrote " << svg.string() << "\n";
  }

  std::cout << "\n" << icca::summary_table(std::span<const icca::MetricsFile>(files));
  return 0;
}

// ---------------------------------------------------------------------------
// repeat-test
// ---------------------------------------------------------------------------

ordered_json sign_test_json(const icca::SignTestResult& r) {
  ordered_json j;
  j["n_positive"] = r.n_positive;
  j["n_negative"] = r.n_negative;
  j["n_ties"] = r.n_ties;
  j["defined"] = r.defined;
  if (r.defined) {
    j["p_value"] = r.p_value;
  } else {
    j["p_value"] = nullptr;  // undefined: every pair tied
  }
  return j;
}

int cmd_repeat_test(const KVConfig& kv, bool verbose) {
  static const std::set<std::string> kKeys = {
      "corpus", "scorer", "out", "templates", "images", "synthetic.count", "synthetic.profile",
      "synthetic.seed"};
  kv.require_known(kKeys);

  std::string scorer_spec = kv.get_string("scorer");
  if (scorer_spec.empty()) {
    throw icca::ConfigError("repeat-test needs --scorer (e.g. scripted:repeat-scorer)");
  }
  std::shared_ptr<icca::Agent> scorer = icca::make_agent(scorer_spec);
  if (!scorer->capability().supports_scoring) {
    throw icca::ConfigError(scorer->name() + " cannot score continuations");
  }

  std::vector<icca::Interaction> interactions = gather_interactions(kv, verbose);
  icca::TemplateSet templates = templates_from(kv);
  bool include_images = kv.get_bool("images", true);

  auto score_fn = [&](const icca::Prompt& prefix, const std::string& continuation) {
    icca::ScoreResult r = icca::score_text(*scorer, prefix, continuation);
    return icca::ScoreOutcome{r.logprob, r.tokens};
  };
  icca::RepeatPreferenceResult result = icca::repeat_preference_experiment(
      score_fn, std::span<const icca::Interaction>(interactions), templates, include_images);

  ordered_json stats;
  stats["interactions"] = result.n_interactions;
  stats["scorer"] = scorer->name();
  stats["images_included"] = include_images;
  stats["logprob_sign_test"] = sign_test_json(result.logprob);
  stats["perplexity_sign_test"] = sign_test_json(result.perplexity);

  fs::path out_dir = kv.get_string("out", "out");
  fs::create_directories(out_dir);
  write_snapshot(out_dir, "repeat-test", kv);
  icca::write_text_file(out_dir / "repeat_test.json", stats.dump(2) + "\n");

  auto describe = [](const char* name, const icca::SignTestResult& r) {
    std::printf("%s: %d positive, %d negative, %d tie(s)", name, r.n_positive, r.n_negative,
                r.n_ties);
    if (r.defined) {
      std::printf(", two-sided sign test p = %.6g\n", r.p_value);
    } else {
      std::printf("; sign test undefined (all pairs tied)\n");
    }
  };
  describe("logprob preference (repeat vs natural)", result.logprob);
  describe("perplexity preference (repeat vs natural)", result.perplexity);
  std::cout << "wrote " << (out_dir / "repeat_test.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// import / validate
// ---------------------------------------------------------------------------

int cmd_import(const KVConfig& kv, bool verbose) {
  static const std::set<std::string> kKeys = {"raw", "mapping", "out"};
  kv.require_known(kKeys);
  fs::path raw = kv.get_string("raw");
  fs::path mapping = kv.get_string("mapping");
  fs::path out_dir = kv.get_string("out", "out/corpus");
  if (raw.empty() || mapping.empty()) {
    throw icca::ConfigError("import needs --raw DIR and --mapping FILE");
  }
  icca::CorpusManifest manifest = icca::import_external(raw, mapping, out_dir);
  write_snapshot(out_dir, "import", kv);
  std::cout << "imported " << manifest.entries.size() << " interaction(s) into "
            << out_dir.string() << "\n";
  if (verbose) {
    for (const auto& e : manifest.entries) std::cout << "  " << e.id << "\n";
  }
  return 0;
}

int cmd_validate(const KVConfig& kv, bool verbose) {
  static const std::set<std::string> kKeys = {"corpus"};
  kv.require_known(kKeys);
  fs::path manifest = kv.get_string("corpus");
  if (manifest.empty()) throw icca::ConfigError("validate needs --corpus MANIFEST");
  icca::LoadReport report = icca::load_corpus(manifest);
  for (const icca::Interaction& in : report.interactions) {
    std::cout << in.id << ": OK (" << in.trials.size() << " trials)\n";
    if (verbose) {
      std::cout << "  context:";
      for (const auto& ref : in.context) std::cout << " " << ref.id();
      std::cout << "\n";
    }
  }
  for (const std::string& err : report.errors) std::cout << "REJECTED " << err << "\n";
  std::cout << report.interactions.size() << " valid, " << report.errors.size() << " rejected\n";
  return report.errors.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-game simulator: repeated 4-image reference games between a\n"
               "speaker and a listener under controlled context/history variants, with\n"
               "adaptation metrics over the resulting transcripts."};
  app.require_subcommand(1);

  struct CommonFlags {
    std::string config_file;
    std::vector<std::string> sets;
    bool verbose = false;
  };

  auto add_common = [](CLI::App* sub, CommonFlags& flags) {
    sub->add_option("--config", flags.config_file, "keyed `key = value` configuration file");
    sub->add_option("--set", flags.sets, "override a configuration key (key=value)");
    sub->add_flag("-v,--verbose", flags.verbose, "chattier progress output");
  };

  // run
  auto run_flags = std::make_shared<CommonFlags>();
  struct RunOpts {
    std::string variant, speaker, listener, corpus, profile, templates, out;
    std::uint64_t seed = 0, synth_seed = 1;
    long synth_count = 1, jobs = 1, max_words = 20;
    double temperature = 0.0;
    bool merge_grid = false, resume = false;
  };
  auto run_opts = std::make_shared<RunOpts>();
  CLI::App* run = app.add_subcommand("run", "play interactions and write transcripts");
  add_common(run, *run_flags);
  auto* o_variant = run->add_option("--variant", run_opts->variant, "variant name (S1..S4, L1..L7)");
  auto* o_speaker = run->add_option("--speaker", run_opts->speaker, "speaker agent spec or 'replay'");
  auto* o_listener = run->add_option("--listener", run_opts->listener, "listener agent spec");
  auto* o_corpus = run->add_option("--corpus", run_opts->corpus, "corpus manifest to replay");
  auto* o_scount = run->add_option("--synthetic-count", run_opts->synth_count,
                                   "number of generated interactions");
  auto* o_sprofile = run->add_option("--synthetic-profile", run_opts->profile,
                                     "converging | repeating | random");
  auto* o_sseed = run->add_option("--synthetic-seed", run_opts->synth_seed,
                                  "base seed for generated interactions");
  auto* o_seed = run->add_option("--seed", run_opts->seed, "master seed for in-run randomness");
  auto* o_out = run->add_option("--out", run_opts->out, "output directory");
  auto* o_grid = run->add_flag("--merge-grid", run_opts->merge_grid,
                               "present the context as one 2x2 grid image");
  auto* o_jobs = run->add_option("--jobs", run_opts->jobs, "parallel interactions");
  auto* o_resume = run->add_flag("--resume", run_opts->resume, "continue partial transcripts");
  auto* o_templates = run->add_option("--templates", run_opts->templates,
                                      "instruction template directory");
  auto* o_temp = run->add_option("--temperature", run_opts->temperature, "decode temperature");
  auto* o_maxw = run->add_option("--max-words", run_opts->max_words, "speaker word limit hint");

  // score
  auto score_flags = std::make_shared<CommonFlags>();
  struct ScoreOpts {
    std::string transcripts, out, stoplist, vectors;
    long resamples = 10000;
    double confidence = 0.95;
    std::uint64_t seed = 0;
  };
  auto score_opts = std::make_shared<ScoreOpts>();
  CLI::App* score = app.add_subcommand("score", "compute adaptation metrics over transcripts");
  add_common(score, *score_flags);
  auto* s_dir = score->add_option("--transcripts", score_opts->transcripts,
                                  "directory of transcript .jsonl files");
  auto* s_out = score->add_option("--out", score_opts->out, "output directory");
  auto* s_stop = score->add_option("--stoplist", score_opts->stoplist, "stoplist file");
  auto* s_vec = score->add_option("--vectors", score_opts->vectors, "word-vector table (text)");
  auto* s_res = score->add_option("--resamples", score_opts->resamples, "bootstrap resamples");
  auto* s_conf = score->add_option("--confidence", score_opts->confidence, "CI level");
  auto* s_seed = score->add_option("--seed", score_opts->seed, "bootstrap seed");

  // report
  auto report_flags = std::make_shared<CommonFlags>();
  auto report_csvs = std::make_shared<std::vector<std::string>>();
  auto report_out = std::make_shared<std::string>();
  CLI::App* report = app.add_subcommand("report", "render SVG charts from metrics CSVs");
  add_common(report, *report_flags);
  report->add_option("--csv", *report_csvs, "metrics CSV (repeat for several series)");
  auto* r_out = report->add_option("--out", *report_out, "output directory");

  // repeat-test
  auto rt_flags = std::make_shared<CommonFlags>();
  struct RtOpts {
    std::string corpus, scorer, out, templates, profile;
    long synth_count = 1;
    std::uint64_t synth_seed = 1;
    bool text_only = false;
  };
  auto rt_opts = std::make_shared<RtOpts>();
  CLI::App* rt = app.add_subcommand(
      "repeat-test", "compare scores of natural vs repeat-everything transcripts");
  add_common(rt, *rt_flags);
  auto* t_corpus = rt->add_option("--corpus", rt_opts->corpus, "corpus manifest");
  auto* t_scorer = rt->add_option("--scorer", rt_opts->scorer, "scoring agent spec");
  auto* t_out = rt->add_option("--out", rt_opts->out, "output directory");
  auto* t_templates = rt->add_option("--templates", rt_opts->templates,
                                     "instruction template directory");
  auto* t_scount = rt->add_option("--synthetic-count", rt_opts->synth_count,
                                  "number of generated interactions");
  auto* t_sseed = rt->add_option("--synthetic-seed", rt_opts->synth_seed,
                                 "base seed for generated interactions");
  auto* t_sprofile = rt->add_option("--synthetic-profile", rt_opts->profile,
                                    "converging | repeating | random");
  auto* t_textonly = rt->add_flag("--text-only", rt_opts->text_only,
                                  "score text-only prompts (drop image segments)");

  // import
  auto import_flags = std::make_shared<CommonFlags>();
  struct ImportOpts {
    std::string raw, mapping, out;
  };
  auto import_opts = std::make_shared<ImportOpts>();
  CLI::App* import_cmd = app.add_subcommand("import", "normalize an external dataset");
  add_common(import_cmd, *import_flags);
  auto* i_raw = import_cmd->add_option("--raw", import_opts->raw, "raw dataset directory");
  auto* i_map = import_cmd->add_option("--mapping", import_opts->mapping, "mapping config file");
  auto* i_out = import_cmd->add_option("--out", import_opts->out, "output corpus directory");

  // validate
  auto validate_flags = std::make_shared<CommonFlags>();
  auto validate_corpus = std::make_shared<std::string>();
  CLI::App* validate = app.add_subcommand("validate", "check a corpus against the game rules");
  add_common(validate, *validate_flags);
  auto* v_corpus = validate->add_option("--corpus", *validate_corpus, "corpus manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto build_kv = [](const CommonFlags& flags) {
    KVConfig kv;
    if (!flags.config_file.empty()) kv = KVConfig::from_file(flags.config_file);
    for (const std::string& pair : flags.sets) kv.apply_set_pair(pair);
    return kv;
  };

  try {
    if (run->parsed()) {
      KVConfig kv = build_kv(*run_flags);
      if (o_variant->count()) kv.set("variant", run_opts->variant);
      if (o_speaker->count()) kv.set("speaker", run_opts->speaker);
      if (o_listener->count()) kv.set("listener", run_opts->listener);
      if (o_corpus->count()) kv.set("corpus", run_opts->corpus);
      if (o_scount->count()) kv.set("synthetic.count", std::to_string(run_opts->synth_count));
      if (o_sprofile->count()) kv.set("synthetic.profile", run_opts->profile);
      if (o_sseed->count()) kv.set("synthetic.seed", std::to_string(run_opts->synth_seed));
      if (o_seed->count()) kv.set("seed", std::to_string(run_opts->seed));
      if (o_out->count()) kv.set("out", run_opts->out);
      if (o_grid->count()) kv.set("merge_grid", run_opts->merge_grid ? "true" : "false");
      if (o_jobs->count()) kv.set("jobs", std::to_string(run_opts->jobs));
      if (o_resume->count()) kv.set("resume", run_opts->resume ? "true" : "false");
      if (o_templates->count()) kv.set("templates", run_opts->templates);
      if (o_temp->count()) kv.set("temperature", std::to_string(run_opts->temperature));
      if (o_maxw->count()) kv.set("max_words", std::to_string(run_opts->max_words));
      return cmd_run(kv, run_flags->verbose);
    }
    if (score->parsed()) {
      KVConfig kv = build_kv(*score_flags);
      if (s_dir->count()) kv.set("transcripts", score_opts->transcripts);
      if (s_out->count()) kv.set("out", score_opts->out);
      if (s_stop->count()) kv.set("stoplist", score_opts->stoplist);
      if (s_vec->count()) kv.set("vectors", score_opts->vectors);
      if (s_res->count()) kv.set("resamples", std::to_string(score_opts->resamples));
      if (s_conf->count()) kv.set("confidence", std::to_string(score_opts->confidence));
      if (s_seed->count()) kv.set("seed", std::to_string(score_opts->seed));
      return cmd_score(kv, score_flags->verbose);
    }
    if (report->parsed()) {
      KVConfig kv = build_kv(*report_flags);
      if (r_out->count()) kv.set("out", *report_out);
      return cmd_report(*report_csvs, kv, report_flags->verbose);
    }
    if (rt->parsed()) {
      KVConfig kv = build_kv(*rt_flags);
      if (t_corpus->count()) kv.set("corpus", rt_opts->corpus);
      if (t_scorer->count()) kv.set("scorer", rt_opts->scorer);
      if (t_out->count()) kv.set("out", rt_opts->out);
      if (t_templates->count()) kv.set("templates", rt_opts->templates);
      if (t_scount->count()) kv.set("synthetic.count", std::to_string(rt_opts->synth_count));
      if (t_sseed->count()) kv.set("synthetic.seed", std::to_string(rt_opts->synth_seed));
      if (t_sprofile->count()) kv.set("synthetic.profile", rt_opts->profile);
      if (t_textonly->count()) kv.set("images", rt_opts->text_only ? "false" : "true");
      return cmd_repeat_test(kv, rt_flags->verbose);
    }
    if (import_cmd->parsed()) {
      KVConfig kv = build_kv(*import_flags);
      if (i_raw->count()) kv.set("raw", import_opts->raw);
      if (i_map->count()) kv.set("mapping", import_opts->mapping);
      if (i_out->count()) kv.set("out", import_opts->out);
      return cmd_import(kv, import_flags->verbose);
    }
    if (validate->parsed()) {
      KVConfig kv = build_kv(*validate_flags);
      if (v_corpus->count()) kv.set("corpus", *validate_corpus);
      return cmd_validate(kv, validate_flags->verbose);
    }
  } catch (const icca::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
