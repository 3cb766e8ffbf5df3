#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "icca/agents.hpp"
#include "icca/core.hpp"
#include "icca/corpus.hpp"
#include "icca/promptkit.hpp"
#include "icca/util.hpp"

namespace icca {

// ---------------------------------------------------------------------------
// Run configuration. The source interaction supplies the context images, the
// target schedule, and (for replay speakers) the recorded messages.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string variant = "L3";
  std::string speaker_spec = "replay";
  std::string listener_spec = "scripted:perfect";
  Interaction source;
  std::uint64_t master_seed = 0;
  std::filesystem::path output_path;  // empty = in-memory only
  bool merge_context_grid = false;
  bool resume = false;
  DecodeOptions decode;
  TemplateSet templates = TemplateSet::builtin();

  std::string run_id() const { return variant + "_" + source.id; }

  // Everything that shapes the prompt/response stream, hashed for resume
  // safety. Template texts are included: editing them changes the run.
  std::string config_hash() const {
    ordered_json j;
    j["variant"] = variant;
    j["speaker"] = speaker_spec;
    j["listener"] = listener_spec;
    j["interaction"] = source.id;
    j["master_seed"] = master_seed;
    j["merge_grid"] = merge_context_grid;
    j["temperature"] = decode.temperature;
    j["max_words_hint"] = decode.max_words_hint;
    std::uint64_t th = 0;
    for (const char* key : {"s1", "s2", "s3", "s4", "listener"}) {
      th = splitmix64(th ^ fnv1a64(templates.instruction(key)));
    }
    j["templates"] = th;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
  }
};

enum class RunStatus { Complete, Partial, Refused };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Complete: return "complete";
    case RunStatus::Partial: return "partial";
    case RunStatus::Refused: return "refused";
  }
  return "?";
}

struct Transcript {
  std::string run_id;
  std::string variant;
  RunStatus status = RunStatus::Complete;
  std::string error;                     // fatal error, when not complete
  std::vector<std::string> trial_errors; // recorded anomalies (run continued)
  Interaction interaction;               // trials completed so far
};

// ---------------------------------------------------------------------------
// Transcript JSONL: header object, one object per completed trial (corpus
// schema plus gold label, raw I/O, and latencies), footer with the outcome.
// Deliberately no wall-clock fields: identical runs produce identical bytes.
// ---------------------------------------------------------------------------

namespace detail {

inline ordered_json transcript_header(const RunConfig& config) {
  ordered_json h;
  h["kind"] = "header";
  h["run_id"] = config.run_id();
  h["variant"] = config.variant;
  h["interaction_id"] = config.source.id;
  h["source"] = to_string(config.source.source);
  h["speaker"] = config.speaker_spec;
  h["listener"] = config.listener_spec;
  h["master_seed"] = config.master_seed;
  h["merge_grid"] = config.merge_context_grid;
  h["config_hash"] = config.config_hash();
  return h;
}

inline ordered_json transcript_trial(const TrialRecord& t) {
  ordered_json o = trial_to_json(t);
  // Re-order: gold_label belongs right after target_id for readability.
  ordered_json out;
  for (auto& [k, v] : o.items()) {
    out[k] = v;
    if (k == "target_id") out["gold_label"] = t.gold_label;
  }
  out["raw_speaker"] = t.raw_speaker;
  out["raw_listener"] = t.raw_listener;
  out["speaker_latency_ms"] = t.speaker_latency_ms;
  out["listener_latency_ms"] = t.listener_latency_ms;
  return out;
}

class TranscriptWriter {
 public:
  TranscriptWriter() = default;

  void open(const std::filesystem::path& path, const RunConfig& config) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw LoadError("cannot open transcript for writing: " + path.string());
    write_line(transcript_header(config).dump());
  }

  void trial(const TrialRecord& t) { write_line(transcript_trial(t).dump()); }

  void footer(RunStatus status, std::span<const std::string> errors) {
    ordered_json f;
    f["kind"] = "footer";
    f["status"] = to_string(status);
    f["errors"] = ordered_json::array();
    for (const std::string& e : errors) f["errors"].push_back(e);
    write_line(f.dump());
  }

 private:
  void write_line(const std::string& line) {
    if (!out_.is_open()) return;
    out_ << line << '\n';
    out_.flush();  // a crash loses at most the in-flight trial
  }

  std::ofstream out_;
};

// Recorded agent I/O from a previous partial run, replayed on resume.
struct RecordedTrial {
  std::string message;
  std::string selection;
  std::string raw_speaker;
  std::string raw_listener;
  double speaker_latency_ms = 0.0;
  double listener_latency_ms = 0.0;
  std::string extra;
};

struct ResumeState {
  std::vector<RecordedTrial> trials;
};

inline std::optional<ResumeState> read_resume_state(const std::filesystem::path& path,
                                                    const RunConfig& config) {
  if (path.empty() || !std::filesystem::exists(path)) return std::nullopt;
  std::string content = read_text_file(path);
  ResumeState state;
  bool saw_header = false;
  for (const std::string& line : split_lines(content)) {
    if (trim(line).empty()) continue;
    ordered_json o = ordered_json::parse(line, nullptr, false);
    if (o.is_discarded() || !o.is_object()) {
      throw ParseError(path.string() + ": malformed transcript line; not resuming");
    }
    std::string kind = o.value("kind", std::string());
    if (kind == "header") {
      std::string hash = o.value("config_hash", std::string());
      if (hash != config.config_hash()) {
        throw ConfigError(path.string() +
                          ": existing transcript was produced by a different configuration (hash " +
                          hash + " != " + config.config_hash() + ")");
      }
      saw_header = true;
      continue;
    }
    if (kind == "footer") continue;  // prior outcome is superseded
    if (!saw_header) throw ParseError(path.string() + ": trial line before header");
    RecordedTrial r;
    r.message = o.value("message", std::string());
    r.selection = o.value("selection", std::string());
    r.raw_speaker = o.value("raw_speaker", std::string());
    r.raw_listener = o.value("raw_listener", std::string());
    r.speaker_latency_ms = o.value("speaker_latency_ms", 0.0);
    r.listener_latency_ms = o.value("listener_latency_ms", 0.0);
    state.trials.push_back(std::move(r));
  }
  if (!saw_header) return std::nullopt;
  return state;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Transcript read-back (for scoring recorded runs). Images are not needed
// for metrics, so refs carry ids only.
// ---------------------------------------------------------------------------

inline Transcript read_transcript(const std::filesystem::path& path) {
  static const std::set<std::string> kTranscriptKeys = {
      "trial",      "repetition",       "context_ids",        "labels",
      "target_id",  "gold_label",       "message",            "selection",
      "correct",    "raw_speaker",      "raw_listener",       "speaker_latency_ms",
      "listener_latency_ms"};
  Transcript tr;
  std::string content = read_text_file(path);
  int line_no = 0;
  bool saw_footer = false;
  for (const std::string& line : split_lines(content)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ordered_json o = ordered_json::parse(line, nullptr, false);
    if (o.is_discarded() || !o.is_object()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": not a JSON object");
    }
    std::string kind = o.value("kind", std::string());
    if (kind == "header") {
      tr.run_id = o.value("run_id", std::string());
      tr.variant = o.value("variant", std::string());
      tr.interaction.id = o.value("interaction_id", std::string());
      tr.interaction.source =
          o.value("source", std::string()) == "human_corpus" ? Source::HumanCorpus
                                                             : Source::Simulated;
      tr.interaction.variant = tr.variant;
      continue;
    }
    if (kind == "footer") {
      std::string s = o.value("status", std::string());
      tr.status = s == "complete" ? RunStatus::Complete
                                  : (s == "refused" ? RunStatus::Refused : RunStatus::Partial);
      saw_footer = true;
      if (o.contains("errors")) {
        for (const auto& e : o["errors"]) tr.trial_errors.push_back(e.get<std::string>());
      }
      continue;
    }
    TrialRecord t;
    t.trial_index = o.at("trial").get<int>();
    t.repetition = o.at("repetition").get<int>();
    ContextView view;
    for (int k = 0; k < kContextSize; ++k) {
      view.slots[static_cast<std::size_t>(k)] =
          ImageRef::from_id(o.at("context_ids")[static_cast<std::size_t>(k)].get<std::string>());
      view.labels[static_cast<std::size_t>(k)] =
          o.at("labels")[static_cast<std::size_t>(k)].get<std::string>();
    }
    t.listener_view = view;
    t.speaker_view = view;
    t.target_id = o.at("target_id").get<std::string>();
    t.gold_label = o.at("gold_label").get<std::string>();
    t.message = o.at("message").get<std::string>();
    t.selection = o.at("selection").get<std::string>();
    t.correct = o.at("correct").get<bool>();
    t.raw_speaker = o.value("raw_speaker", std::string());
    t.raw_listener = o.value("raw_listener", std::string());
    t.speaker_latency_ms = o.value("speaker_latency_ms", 0.0);
    t.listener_latency_ms = o.value("listener_latency_ms", 0.0);
    t.feedback_text = render_feedback(t.selection, t.gold_label, Role::Listener);
    ordered_json extra = ordered_json::object();
    for (auto& [k, v] : o.items()) {
      if (kTranscriptKeys.count(k) == 0) extra[k] = v;
    }
    if (!extra.empty()) t.extra = extra.dump();
    tr.interaction.trials.push_back(std::move(t));

    if (tr.interaction.trials.size() == 1) {
      tr.interaction.context = view.slots;
    }
  }
  if (tr.run_id.empty()) throw ParseError(path.string() + ": missing transcript header");
  if (!saw_footer) tr.status = RunStatus::Partial;  // run died before its footer
  return tr;
}

// ---------------------------------------------------------------------------
// The game loop.
// ---------------------------------------------------------------------------

namespace detail {

// Adapters are shared process-wide so one rate limiter covers a whole batch;
// scripted agents are stateful and get one instance per run.
inline std::shared_ptr<Agent> agent_for_run(const std::string& spec) {
  if (spec.rfind("adapter:", 0) == 0) {
    static std::mutex mutex;
    static std::map<std::string, std::shared_ptr<Agent>> shared;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = shared.find(spec);
    if (it != shared.end()) return it->second;
    std::shared_ptr<Agent> agent = make_agent(spec);
    shared.emplace(spec, agent);
    return agent;
  }
  return make_agent(spec);
}

}  // namespace detail

inline Transcript run_interaction(const RunConfig& config) {
  Transcript tr;
  tr.run_id = config.run_id();
  tr.variant = config.variant;
  tr.interaction.id = config.source.id;
  tr.interaction.source = config.source.source;
  tr.interaction.variant = config.variant;
  tr.interaction.context = config.source.context;

  const Variant& variant = find_variant(config.variant);
  // The listener's display frame: listener variants use themselves; speaker
  // variants pair with the standard images-once listener setup.
  const Variant& listener_frame =
      variant.model_role == Role::Listener ? variant : find_variant("L3");

  if (config.source.trials.size() != kTrialsPerGame) {
    throw ConfigError(tr.run_id + ": source interaction must provide a full " +
                      std::to_string(kTrialsPerGame) + "-trial schedule");
  }

  bool replay_speaker = is_replay_spec(config.speaker_spec);
  if (variant.model_role == Role::Speaker && replay_speaker) {
    throw ConfigError(tr.run_id + ": speaker variants need a model or scripted speaker agent");
  }
  if (is_replay_spec(config.listener_spec)) {
    throw ConfigError(tr.run_id + ": replay is speaker-only; pick an agent for the listener");
  }

  std::shared_ptr<Agent> speaker;
  if (!replay_speaker) speaker = detail::agent_for_run(config.speaker_spec);
  std::shared_ptr<Agent> listener = detail::agent_for_run(config.listener_spec);

  // Capability refusal happens before any trial runs.
  {
    int listener_peak = peak_image_count(listener_frame, config.merge_context_grid);
    AgentCapability cap = listener->capability();
    if (listener_peak > 0 && !cap.supports_images) {
      tr.status = RunStatus::Refused;
      tr.error = listener->name() + " does not accept images";
    } else if (listener_peak > cap.max_images) {
      tr.status = RunStatus::Refused;
      tr.error = "variant " + listener_frame.name + " needs up to " +
                 std::to_string(listener_peak) + " images per prompt; " + listener->name() +
                 " accepts at most " + std::to_string(cap.max_images);
    } else if (speaker != nullptr) {
      int speaker_peak = peak_image_count(variant, config.merge_context_grid);
      AgentCapability scap = speaker->capability();
      if (speaker_peak > scap.max_images || (speaker_peak > 0 && !scap.supports_images)) {
        tr.status = RunStatus::Refused;
        tr.error = "variant " + variant.name + " needs up to " + std::to_string(speaker_peak) +
                   " images per prompt; " + speaker->name() + " cannot take them";
      }
    }
  }

  std::optional<detail::ResumeState> resume;
  if (config.resume && tr.status != RunStatus::Refused) {
    resume = detail::read_resume_state(config.output_path, config);
  }
  std::size_t recorded = resume ? resume->trials.size() : 0;
  if (recorded > 0) {
    if (speaker != nullptr) speaker->skip_calls(static_cast<int>(recorded));
    listener->skip_calls(static_cast<int>(recorded));
  }

  detail::TranscriptWriter writer;
  writer.open(config.output_path, config);

  TrialAware* trial_hook = dynamic_cast<TrialAware*>(listener.get());

  for (int t = 1; tr.status == RunStatus::Complete && t <= kTrialsPerGame; ++t) {
    const TrialRecord& source_trial = config.source.trials[static_cast<std::size_t>(t - 1)];
    TrialRecord record;
    record.trial_index = t;
    record.repetition = repetition_of_trial(t);
    record.target_id = source_trial.target_id;

    // Gold view: the label assignment the system and feedback believe in.
    LabelAssignment assignment = assign_labels(tr.interaction.id, t,
                                               listener_frame.context_policy, config.master_seed);
    bool presented = context_presented(listener_frame, t);
    ContextView gold_view = make_view(tr.interaction.context, assignment, presented);
    auto gold = gold_view.label_of(record.target_id);
    if (!gold) {
      tr.status = RunStatus::Partial;
      tr.error = "trial " + std::to_string(t) + ": target " + record.target_id +
                 " missing from context";
      break;
    }
    record.gold_label = *gold;
    record.listener_view = apply_manipulation(gold_view, listener_frame.manipulation,
                                              tr.interaction.id, t, config.master_seed);

    // Speaker sees the unmanipulated context under the speaker variant's
    // display policy (relevant only when a speaker agent is running).
    bool speaker_presented =
        variant.model_role == Role::Speaker ? context_presented(variant, t) : presented;
    record.speaker_view = make_view(tr.interaction.context, assignment, speaker_presented);

    try {
      // --- Speaker turn ---
      if (replay_speaker) {
        record.message = source_trial.message;
      } else {
        CurrentTrial current{t, record.speaker_view, record.gold_label, ""};
        Prompt prompt = build_prompt(variant, config.templates,
                                     std::span<const TrialRecord>(tr.interaction.trials),
                                     current, Role::Speaker,
                                     {config.merge_context_grid});
        if (recorded >= static_cast<std::size_t>(t)) {
          const auto& r = resume->trials[static_cast<std::size_t>(t - 1)];
          record.raw_speaker = r.raw_speaker;
          record.speaker_latency_ms = r.speaker_latency_ms;
        } else {
          AgentResponse reply = complete(*speaker, prompt, config.decode);
          record.raw_speaker = reply.text;
          record.speaker_latency_ms = reply.latency_ms;
        }
        ParsedMessage parsed =
            parse_speaker_message(record.raw_speaker, config.decode.max_words_hint);
        record.message = parsed.message;
        if (parsed.empty) {
          tr.trial_errors.push_back("trial " + std::to_string(t) +
                                    ": speaker produced an empty message");
        } else if (parsed.length_violation) {
          tr.trial_errors.push_back("trial " + std::to_string(t) +
                                    ": speaker message not shorter than " +
                                    std::to_string(config.decode.max_words_hint) + " words");
        }
      }

      // --- Listener turn ---
      std::vector<TrialRecord> no_history;
      std::span<const TrialRecord> history =
          listener_frame.history_policy == HistoryPolicy::Full
              ? std::span<const TrialRecord>(tr.interaction.trials)
              : std::span<const TrialRecord>(no_history);
      CurrentTrial current{t, record.listener_view, "", record.message};
      Prompt prompt = build_prompt(listener_frame, config.templates, history, current,
                                   Role::Listener, {config.merge_context_grid});
      if (recorded >= static_cast<std::size_t>(t)) {
        const auto& r = resume->trials[static_cast<std::size_t>(t - 1)];
        record.raw_listener = r.raw_listener;
        record.listener_latency_ms = r.listener_latency_ms;
      } else {
        if (trial_hook != nullptr) trial_hook->on_trial({t, record.gold_label});
        AgentResponse reply = complete(*listener, prompt, config.decode);
        record.raw_listener = reply.text;
        record.listener_latency_ms = reply.latency_ms;
      }
      record.selection = parse_listener_choice(record.raw_listener, kLabels);
      if (record.selection == kInvalidSelection) {
        tr.trial_errors.push_back("trial " + std::to_string(t) +
                                  ": unparseable listener reply recorded as INVALID");
      }
    } catch (const Error& e) {
      tr.status = RunStatus::Partial;
      tr.error = "trial " + std::to_string(t) + ": " + e.what();
      break;
    }

    record.correct = record.selection == record.gold_label;
    record.feedback_text = render_feedback(record.selection, record.gold_label, Role::Listener);
    tr.interaction.trials.push_back(std::move(record));
    writer.trial(tr.interaction.trials.back());
  }

  if (tr.status == RunStatus::Complete &&
      tr.interaction.trials.size() != kTrialsPerGame) {
    tr.status = RunStatus::Partial;
    if (tr.error.empty()) tr.error = "run stopped before trial 24";
  }
  std::vector<std::string> footer_errors = tr.trial_errors;
  if (!tr.error.empty()) footer_errors.push_back(tr.error);
  writer.footer(tr.status, footer_errors);
  return tr;
}

// Runs configs concurrently (at most `parallelism` at a time). Results come
// back in input order; one failing run never aborts the others.
inline std::vector<Transcript> run_batch(std::span<const RunConfig> configs, int parallelism) {
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  std::vector<Transcript> results(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      try {
        results[i] = run_interaction(configs[i]);
      } catch (const Error& e) {
        results[i].run_id = configs[i].run_id();
        results[i].variant = configs[i].variant;
        results[i].interaction.id = configs[i].source.id;
        results[i].status = RunStatus::Partial;
        results[i].error = e.what();
      }
    }
  };
  std::size_t n_threads = std::min(static_cast<std::size_t>(parallelism), configs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  return results;
}

}  // namespace icca
