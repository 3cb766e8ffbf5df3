#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "icca/image.hpp"
#include "icca/util.hpp"

namespace icca {

inline constexpr int kContextSize = 4;
inline constexpr int kRepetitions = 6;
inline constexpr int kTrialsPerGame = kContextSize * kRepetitions;  // 24
inline constexpr int kMaxMessageWords = 20;

inline constexpr const char* kInvalidSelection = "INVALID";

inline const std::array<std::string, kContextSize> kLabels = {"A", "B", "C", "D"};

// 1-based trial index -> 1-based repetition block.
constexpr int repetition_of_trial(int trial_index) {
  return (trial_index - 1) / kContextSize + 1;
}

// ---------------------------------------------------------------------------
// ImageRef: identity plus lazily-decoded pixels.
//
// Copies share one decode cell, so a context of four refs copied into every
// trial view decodes each file at most once per process.
// ---------------------------------------------------------------------------

class ImageRef {
 public:
  ImageRef() = default;

  static ImageRef from_file(std::string id, std::filesystem::path path) {
    ImageRef ref;
    ref.id_ = std::move(id);
    ref.cell_ = std::make_shared<Cell>();
    ref.cell_->path = std::move(path);
    return ref;
  }

  static ImageRef from_raster(std::string id, Raster raster) {
    ImageRef ref;
    ref.id_ = std::move(id);
    ref.cell_ = std::make_shared<Cell>();
    ref.cell_->raster = std::move(raster);
    ref.cell_->loaded = true;
    return ref;
  }

  // Identity without pixels, for metric-only processing of recorded runs.
  static ImageRef from_id(std::string id) {
    ImageRef ref;
    ref.id_ = std::move(id);
    return ref;
  }

  const std::string& id() const { return id_; }
  bool empty() const { return id_.empty(); }
  bool has_pixels() const { return cell_ != nullptr; }

  // Path the pixels come from, if file-backed.
  const std::filesystem::path* path() const {
    return cell_ && !cell_->path.empty() ? &cell_->path : nullptr;
  }

  const Raster& raster() const {
    if (!cell_) throw ContractError("no pixels behind image ref '" + id_ + "'");
    std::call_once(cell_->once, [&] {
      if (!cell_->loaded) {
        cell_->raster = png::read_file(cell_->path);
        cell_->loaded = true;
      }
    });
    return cell_->raster;
  }

  friend bool operator==(const ImageRef& a, const ImageRef& b) { return a.id_ == b.id_; }

 private:
  struct Cell {
    std::filesystem::path path;
    Raster raster;
    bool loaded = false;
    std::once_flag once;
  };

  std::string id_;
  std::shared_ptr<Cell> cell_;
};

// ---------------------------------------------------------------------------
// What one participant sees on one trial: four slots in display order, with
// labels A-D. `presented` is false when the context policy withholds the
// images on this trial (labels still exist; the pixels just are not shown).
// ---------------------------------------------------------------------------

struct ContextView {
  std::array<ImageRef, kContextSize> slots;
  std::array<std::string, kContextSize> labels = kLabels;
  bool presented = true;

  // Label of the slot holding `image_id`, or nullopt.
  std::optional<std::string> label_of(const std::string& image_id) const {
    for (int i = 0; i < kContextSize; ++i) {
      if (slots[static_cast<std::size_t>(i)].id() == image_id)
        return labels[static_cast<std::size_t>(i)];
    }
    return std::nullopt;
  }

  const ImageRef* image_of(const std::string& label) const {
    for (int i = 0; i < kContextSize; ++i) {
      if (labels[static_cast<std::size_t>(i)] == label)
        return &slots[static_cast<std::size_t>(i)];
    }
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Trial and interaction records.
// ---------------------------------------------------------------------------

enum class Source { HumanCorpus, Simulated };

inline const char* to_string(Source s) {
  return s == Source::HumanCorpus ? "human_corpus" : "simulated";
}

struct TrialRecord {
  int trial_index = 0;  // 1-based
  int repetition = 0;   // 1-based

  ContextView speaker_view;   // what the speaker saw (display order)
  ContextView listener_view;  // what the listener saw (display order)

  std::string target_id;
  // Label of the target in the *unmanipulated* view. Under a misleading
  // display this differs from speaker_view.label_of(target_id).
  std::string gold_label;

  std::string message;        // parsed speaker utterance
  std::string raw_speaker;    // verbatim agent output, empty when replayed
  std::string selection;      // parsed listener label, or kInvalidSelection
  std::string raw_listener;   // verbatim agent output
  bool correct = false;
  // Feedback as the listener saw it; speaker-phrased feedback is re-rendered
  // from (selection, gold_label) when a speaker prompt is built.
  std::string feedback_text;

  double speaker_latency_ms = 0.0;
  double listener_latency_ms = 0.0;

  // Unrecognized per-trial fields from an imported corpus, serialized JSON
  // object; preserved verbatim on write.
  std::string extra;
};

struct Interaction {
  std::string id;
  Source source = Source::Simulated;
  std::string variant;  // empty for human corpus data
  std::array<ImageRef, kContextSize> context;  // canonical (unmanipulated) order
  std::vector<TrialRecord> trials;
};

// ---------------------------------------------------------------------------
// Structural validation. Violations carry the trial they occur on (0 for
// interaction-level problems) and a human-readable rule description.
// ---------------------------------------------------------------------------

struct Violation {
  int trial = 0;
  std::string rule;
};

inline std::vector<Violation> validate_interaction(const Interaction& in) {
  std::vector<Violation> out;
  auto fail = [&](int trial, std::string rule) { out.push_back({trial, std::move(rule)}); };

  if (in.trials.size() != kTrialsPerGame) {
    fail(0, "trial count " + std::to_string(in.trials.size()) + " != " +
                std::to_string(kTrialsPerGame));
  }
  for (int i = 0; i < kContextSize; ++i) {
    for (int j = i + 1; j < kContextSize; ++j) {
      if (!in.context[static_cast<std::size_t>(i)].empty() &&
          in.context[static_cast<std::size_t>(i)].id() ==
              in.context[static_cast<std::size_t>(j)].id()) {
        fail(0, "duplicate context image id " + in.context[static_cast<std::size_t>(i)].id());
      }
    }
  }

  auto in_context = [&](const std::string& id) {
    for (const auto& ref : in.context) {
      if (ref.id() == id) return true;
    }
    return false;
  };

  // Per repetition block: each context image is the target exactly once.
  std::vector<std::vector<std::string>> targets_by_rep(kRepetitions + 1);
  for (std::size_t i = 0; i < in.trials.size(); ++i) {
    const TrialRecord& t = in.trials[i];
    int expect_index = static_cast<int>(i) + 1;
    if (t.trial_index != expect_index) {
      fail(t.trial_index, "trial_index " + std::to_string(t.trial_index) +
                              " out of order (expected " + std::to_string(expect_index) + ")");
    }
    int expect_rep = repetition_of_trial(expect_index);
    if (t.repetition != expect_rep) {
      fail(t.trial_index, "repetition " + std::to_string(t.repetition) + " != " +
                              std::to_string(expect_rep));
    }
    if (!in_context(t.target_id)) {
      fail(t.trial_index, "target " + t.target_id + " not in context");
    } else if (expect_rep >= 1 && expect_rep <= kRepetitions) {
      targets_by_rep[static_cast<std::size_t>(expect_rep)].push_back(t.target_id);
    }
    bool valid_label = false;
    for (const auto& l : kLabels) valid_label = valid_label || l == t.gold_label;
    if (!valid_label) fail(t.trial_index, "gold label '" + t.gold_label + "' not in A-D");

    bool selection_ok = t.selection == kInvalidSelection;
    for (const auto& l : kLabels) selection_ok = selection_ok || l == t.selection;
    if (!selection_ok) {
      fail(t.trial_index, "selection '" + t.selection + "' not a label or " + kInvalidSelection);
    }
    bool expect_correct = t.selection == t.gold_label;
    if (t.correct != expect_correct) {
      fail(t.trial_index, std::string("correct flag inconsistent with selection vs gold label"));
    }
    if (t.feedback_text.empty()) fail(t.trial_index, "feedback_text empty on completed trial");
  }
  for (int rep = 1; rep <= kRepetitions; ++rep) {
    auto& targets = targets_by_rep[static_cast<std::size_t>(rep)];
    std::sort(targets.begin(), targets.end());
    for (std::size_t i = 1; i < targets.size(); ++i) {
      if (targets[i] == targets[i - 1]) {
        fail(0, "repetition " + std::to_string(rep) + ": target " + targets[i] +
                    " appears more than once");
      }
    }
  }
  return out;
}

}  // namespace icca
