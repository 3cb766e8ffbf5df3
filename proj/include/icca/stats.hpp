#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icca/core.hpp"
#include "icca/promptkit.hpp"
#include "icca/util.hpp"

namespace icca {

// ---------------------------------------------------------------------------
// Percentile bootstrap.
// ---------------------------------------------------------------------------

struct BootstrapSpec {
  int resamples = 10000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
};

struct BootstrapResult {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
};

namespace detail {

// Linear-interpolation quantile (R type 7) over a sorted vector.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ContractError("quantile of empty vector");
  if (sorted.size() == 1) return sorted[0];
  double h = q * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

inline BootstrapResult bootstrap_ci(std::span<const double> samples, const BootstrapSpec& spec) {
  if (samples.empty()) throw ContractError("bootstrap_ci: empty sample list");
  if (spec.resamples < 1) throw ConfigError("bootstrap resamples must be >= 1");
  if (!(spec.confidence > 0.0 && spec.confidence < 1.0)) {
    throw ConfigError("bootstrap confidence must be in (0,1)");
  }
  double mean = std::accumulate(samples.begin(), samples.end(), 0.0) /
                static_cast<double>(samples.size());

  Rng rng(spec.seed);
  std::vector<double> means(static_cast<std::size_t>(spec.resamples));
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) sum += samples[rng.bounded(samples.size())];
    m = sum / static_cast<double>(samples.size());
  }
  std::sort(means.begin(), means.end());
  double alpha = 1.0 - spec.confidence;
  BootstrapResult out;
  out.mean = mean;
  out.low = detail::quantile_sorted(means, alpha / 2.0);
  out.high = detail::quantile_sorted(means, 1.0 - alpha / 2.0);
  // Percentile intervals from few resamples can exclude the sample mean by a
  // hair; pin the interval so low <= mean <= high always holds.
  out.low = std::min(out.low, mean);
  out.high = std::max(out.high, mean);
  return out;
}

// ---------------------------------------------------------------------------
// Exact two-sided sign test.
// ---------------------------------------------------------------------------

struct SignTestResult {
  int n_positive = 0;
  int n_negative = 0;
  int n_ties = 0;
  double p_value = 1.0;
  bool defined = false;  // false when every pair tied
};

// p = 2 * P[Binomial(n, 1/2) <= min(n_pos, n_neg)], capped at 1. Computed in
// long double so tiny tails (2^-53 at n=54) come out exact.
inline SignTestResult sign_test(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw ContractError("sign_test: empty pair list");
  SignTestResult out;
  for (const auto& [a, b] : pairs) {
    if (a > b) {
      ++out.n_positive;
    } else if (a < b) {
      ++out.n_negative;
    } else {
      ++out.n_ties;
    }
  }
  int n = out.n_positive + out.n_negative;
  if (n == 0) {
    out.defined = false;
    out.p_value = 1.0;
    return out;
  }
  int k = std::min(out.n_positive, out.n_negative);
  long double half_pow = std::pow(0.5L, static_cast<long double>(n));
  long double pmf = half_pow;  // C(n,0) * (1/2)^n
  long double tail = 0.0L;
  for (int i = 0; i <= k; ++i) {
    tail += pmf;
    pmf = pmf * static_cast<long double>(n - i) / static_cast<long double>(i + 1);
  }
  long double p = 2.0L * tail;
  out.p_value = static_cast<double>(p > 1.0L ? 1.0L : p);
  out.defined = true;
  return out;
}

// ---------------------------------------------------------------------------
// Repeat-transcript experiment: does a scorer prefer a transcript whose
// speaker keeps repeating the repetition-1 messages over the natural one?
// ---------------------------------------------------------------------------

// Replaces every message in repetitions 2..6 with the same image's
// repetition-1 message. Selections, feedback, and views stay untouched.
inline Interaction build_repeat_transcript(const Interaction& in) {
  Interaction out = in;
  std::map<std::string, std::string> first_message;
  for (const TrialRecord& t : in.trials) {
    if (t.repetition == 1) first_message[t.target_id] = t.message;
  }
  for (TrialRecord& t : out.trials) {
    if (t.repetition > 1) {
      auto it = first_message.find(t.target_id);
      if (it != first_message.end()) t.message = it->second;
    }
  }
  return out;
}

struct ScoreOutcome {
  double logprob = 0.0;
  long tokens = 0;
};

struct RepeatPreferenceResult {
  SignTestResult logprob;     // positive = repeat transcript scored higher
  SignTestResult perplexity;  // positive = repeat transcript scored lower
  int n_interactions = 0;
};

namespace detail {

inline Prompt strip_images(Prompt p) {
  std::erase_if(p.segments,
                [](const PromptSegment& s) { return s.kind == PromptSegment::Kind::Image; });
  return p;
}

// Total logprob / token count of an interaction's speaker messages, each
// conditioned on the standard speaker prompt over the preceding trials.
template <typename ScoreFn>
ScoreOutcome score_transcript(ScoreFn&& score, const Interaction& in,
                              const TemplateSet& templates, bool include_images) {
  const Variant& variant = find_variant("S1");
  // Scoring prompts use the canonical context order, shown once up front.
  std::vector<TrialRecord> history;
  history.reserve(in.trials.size());
  ScoreOutcome total;
  for (const TrialRecord& t : in.trials) {
    TrialRecord h = t;
    LabelAssignment identity;
    h.speaker_view = make_view(in.context, identity, t.trial_index == 1);
    CurrentTrial current{t.trial_index, h.speaker_view, t.gold_label, ""};
    Prompt prefix = build_prompt(variant, templates,
                                 std::span<const TrialRecord>(history.data(), history.size()),
                                 current, Role::Speaker);
    if (!include_images) prefix = strip_images(std::move(prefix));
    ScoreOutcome one = score(prefix, t.message);
    total.logprob += one.logprob;
    total.tokens += one.tokens;
    history.push_back(std::move(h));
  }
  return total;
}

}  // namespace detail

// ScoreFn: ScoreOutcome(const Prompt& prefix, const std::string& continuation).
template <typename ScoreFn>
RepeatPreferenceResult repeat_preference_experiment(ScoreFn&& score,
                                                    std::span<const Interaction> interactions,
                                                    const TemplateSet& templates,
                                                    bool include_images = true) {
  if (interactions.empty()) throw ContractError("repeat_preference_experiment: no interactions");
  std::vector<std::pair<double, double>> lp_pairs;
  std::vector<std::pair<double, double>> ppl_pairs;
  for (const Interaction& in : interactions) {
    Interaction repeat = build_repeat_transcript(in);
    ScoreOutcome natural = detail::score_transcript(score, in, templates, include_images);
    ScoreOutcome repeated = detail::score_transcript(score, repeat, templates, include_images);
    lp_pairs.emplace_back(repeated.logprob, natural.logprob);
    double nat_ppl = natural.tokens > 0
                         ? std::exp(-natural.logprob / static_cast<double>(natural.tokens))
                         : 1.0;
    double rep_ppl = repeated.tokens > 0
                         ? std::exp(-repeated.logprob / static_cast<double>(repeated.tokens))
                         : 1.0;
    // Ordered so that "repeat preferred" counts as positive on both tests.
    ppl_pairs.emplace_back(nat_ppl, rep_ppl);
  }
  RepeatPreferenceResult out;
  out.logprob = sign_test(lp_pairs);
  out.perplexity = sign_test(ppl_pairs);
  out.n_interactions = static_cast<int>(interactions.size());
  return out;
}

}  // namespace icca
