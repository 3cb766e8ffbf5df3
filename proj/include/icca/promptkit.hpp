#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icca/core.hpp"
#include "icca/util.hpp"

namespace icca {

// ---------------------------------------------------------------------------
// Variants. S1-S4 vary only in instruction text; L1-L7 vary context display,
// manipulation, and history.
// ---------------------------------------------------------------------------

enum class ContextPolicy {
  OnceAtStart,       // images shown on trial 1 only
  EveryTrialFixed,   // images re-shown each trial, stable order
  EveryTrialShuffled,// images re-shown each trial, seeded shuffle per trial
  IsolatedTrial,     // fresh single-trial conversation (no shared state)
};

enum class Manipulation { None, MaskAll, MisleadAll, MisleadLastRep };

enum class HistoryPolicy { Full, None };

enum class Role { Speaker, Listener };

struct Variant {
  std::string name;
  std::string instruction_key;  // template id: "s1".."s4" or "listener"
  ContextPolicy context_policy = ContextPolicy::OnceAtStart;
  Manipulation manipulation = Manipulation::None;
  HistoryPolicy history_policy = HistoryPolicy::Full;
  Role model_role = Role::Listener;
};

// L7 shows the context once up front (like L3) and re-displays misleading
// shuffles during each last-repetition trial, peaking at 20 images.
inline const std::vector<Variant>& variant_registry() {
  static const std::vector<Variant> v = {
      {"S1", "s1", ContextPolicy::OnceAtStart, Manipulation::None, HistoryPolicy::Full, Role::Speaker},
      {"S2", "s2", ContextPolicy::OnceAtStart, Manipulation::None, HistoryPolicy::Full, Role::Speaker},
      {"S3", "s3", ContextPolicy::OnceAtStart, Manipulation::None, HistoryPolicy::Full, Role::Speaker},
      {"S4", "s4", ContextPolicy::OnceAtStart, Manipulation::None, HistoryPolicy::Full, Role::Speaker},
      {"L1", "listener", ContextPolicy::EveryTrialShuffled, Manipulation::None, HistoryPolicy::Full, Role::Listener},
      {"L2", "listener", ContextPolicy::IsolatedTrial, Manipulation::None, HistoryPolicy::None, Role::Listener},
      {"L3", "listener", ContextPolicy::OnceAtStart, Manipulation::None, HistoryPolicy::Full, Role::Listener},
      {"L4", "listener", ContextPolicy::EveryTrialFixed, Manipulation::None, HistoryPolicy::Full, Role::Listener},
      {"L5", "listener", ContextPolicy::OnceAtStart, Manipulation::MaskAll, HistoryPolicy::Full, Role::Listener},
      {"L6", "listener", ContextPolicy::OnceAtStart, Manipulation::MisleadAll, HistoryPolicy::Full, Role::Listener},
      {"L7", "listener", ContextPolicy::OnceAtStart, Manipulation::MisleadLastRep, HistoryPolicy::Full, Role::Listener},
  };
  return v;
}

inline const Variant& find_variant(std::string_view name) {
  for (const Variant& v : variant_registry()) {
    if (v.name == name) return v;
  }
  throw ConfigError("unknown variant: " + std::string(name));
}

inline bool is_mislead_trial(Manipulation m, int trial_index) {
  if (m == Manipulation::MisleadAll) return true;
  if (m == Manipulation::MisleadLastRep) return repetition_of_trial(trial_index) == kRepetitions;
  return false;
}

// Whether the images are (re-)displayed on this trial.
inline bool context_presented(const Variant& v, int trial_index) {
  switch (v.context_policy) {
    case ContextPolicy::OnceAtStart:
      if (trial_index == 1) return true;
      // MISLEAD_LAST_REP forces manipulated re-displays in the last block.
      return v.manipulation == Manipulation::MisleadLastRep &&
             repetition_of_trial(trial_index) == kRepetitions;
    case ContextPolicy::EveryTrialFixed:
    case ContextPolicy::EveryTrialShuffled:
    case ContextPolicy::IsolatedTrial:
      return true;
  }
  return true;
}

// Number of IMAGE segments in the prompt built at `trial_index` (1-based).
inline int prompt_image_count(const Variant& v, int trial_index, bool grid = false) {
  int per_context = grid ? 1 : kContextSize;
  int contexts = 0;
  if (v.history_policy == HistoryPolicy::None) {
    contexts = 1;
  } else {
    for (int t = 1; t <= trial_index; ++t) {
      if (context_presented(v, t)) ++contexts;
    }
  }
  return contexts * per_context;
}

inline int peak_image_count(const Variant& v, bool grid = false) {
  int peak = 0;
  for (int t = 1; t <= kTrialsPerGame; ++t) {
    peak = std::max(peak, prompt_image_count(v, t, grid));
  }
  return peak;
}

// ---------------------------------------------------------------------------
// Label assignment: which canonical slot sits at each display position.
// ---------------------------------------------------------------------------

struct LabelAssignment {
  int trial_index = 0;
  // slot_at[d] = canonical slot index shown at display position d (labeled
  // kLabels[d]).
  std::array<int, kContextSize> slot_at = {0, 1, 2, 3};
  std::uint64_t seed = 0;

  bool is_identity() const {
    for (int d = 0; d < kContextSize; ++d) {
      if (slot_at[static_cast<std::size_t>(d)] != d) return false;
    }
    return true;
  }
};

inline LabelAssignment assign_labels(std::string_view interaction_id, int trial_index,
                                     ContextPolicy policy, std::uint64_t seed) {
  LabelAssignment out;
  out.trial_index = trial_index;
  out.seed = seed;
  if (policy == ContextPolicy::EveryTrialShuffled) {
    Rng rng(derive_seed(seed, interaction_id, static_cast<std::uint64_t>(trial_index),
                        seed_purpose::kLabels));
    auto perm = random_permutation(kContextSize, rng);
    for (int d = 0; d < kContextSize; ++d) {
      out.slot_at[static_cast<std::size_t>(d)] = perm[static_cast<std::size_t>(d)];
    }
  }
  return out;
}

inline ContextView make_view(const std::array<ImageRef, kContextSize>& context,
                             const LabelAssignment& assignment, bool presented) {
  ContextView view;
  for (int d = 0; d < kContextSize; ++d) {
    view.slots[static_cast<std::size_t>(d)] =
        context[static_cast<std::size_t>(assignment.slot_at[static_cast<std::size_t>(d)])];
  }
  view.presented = presented;
  return view;
}

// ---------------------------------------------------------------------------
// Manipulations act on the displayed view only; gold labels and feedback are
// always computed from the unmanipulated assignment.
// ---------------------------------------------------------------------------

// Non-identity seeded permutation; a redraw loop rules out the identity,
// which would silently turn the manipulation into a clean run.
inline std::array<int, kContextSize> mislead_permutation(std::string_view interaction_id,
                                                         int trial_scope, std::uint64_t seed) {
  Rng rng(derive_seed(seed, interaction_id, static_cast<std::uint64_t>(trial_scope),
                      seed_purpose::kMislead));
  for (;;) {
    auto perm = random_permutation(kContextSize, rng);
    bool identity = true;
    for (int i = 0; i < kContextSize; ++i) identity = identity && perm[static_cast<std::size_t>(i)] == i;
    if (!identity) {
      std::array<int, kContextSize> out{};
      for (int i = 0; i < kContextSize; ++i) out[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i)];
      return out;
    }
  }
}

inline ContextView apply_manipulation(const ContextView& view, Manipulation manipulation,
                                      std::string_view interaction_id, int trial_index,
                                      std::uint64_t seed) {
  switch (manipulation) {
    case Manipulation::None:
      return view;
    case Manipulation::MaskAll: {
      ContextView out = view;
      for (auto& slot : out.slots) {
        const Raster& original = slot.raster();
        slot = ImageRef::from_raster(slot.id(),
                                     Raster::solid(original.width, original.height, 0, 0, 0));
      }
      return out;
    }
    case Manipulation::MisleadAll:
    case Manipulation::MisleadLastRep: {
      if (!is_mislead_trial(manipulation, trial_index)) return view;
      // MISLEAD_ALL uses one permutation for the whole interaction (the
      // context is shown once); MISLEAD_LAST_REP redraws per trial.
      int scope = manipulation == Manipulation::MisleadAll ? 0 : trial_index;
      auto perm = mislead_permutation(interaction_id, scope, seed);
      ContextView out = view;
      for (int d = 0; d < kContextSize; ++d) {
        out.slots[static_cast<std::size_t>(d)] =
            view.slots[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
      }
      return out;
    }
  }
  return view;
}

// ---------------------------------------------------------------------------
// Feedback strings. INVALID selections are wrong by definition and rendered
// with the gold label (there is no listener label to echo).
// ---------------------------------------------------------------------------

inline std::string render_feedback(const std::string& selection, const std::string& gold_label,
                                   Role role) {
  bool valid = false;
  for (const auto& l : kLabels) valid = valid || l == selection;
  bool correct = selection == gold_label;
  if (role == Role::Listener) {
    return (correct ? std::string("Correct. I was referring to Image ")
                    : std::string("Wrong. I was referring to Image ")) +
           gold_label + ".";
  }
  if (correct) return "The listener correctly answered Image " + gold_label + ".";
  return "The listener mistakenly answered Image " + (valid ? selection : gold_label) + ".";
}

// ---------------------------------------------------------------------------
// 2x2 grid merge for single-image-input models.
// ---------------------------------------------------------------------------

inline const std::array<std::string, kContextSize> kGridPositions = {
    "top left", "top right", "bottom left", "bottom right"};

struct MergedGrid {
  Raster image;
  std::array<std::string, kContextSize> positions = kGridPositions;  // row-major
  std::array<std::string, kContextSize> ids;  // ids[k] sits at positions[k]

  std::optional<std::string> position_of(const std::string& id) const {
    for (int k = 0; k < kContextSize; ++k) {
      if (ids[static_cast<std::size_t>(k)] == id) return positions[static_cast<std::size_t>(k)];
    }
    return std::nullopt;
  }
  std::optional<std::string> id_at(const std::string& position) const {
    for (int k = 0; k < kContextSize; ++k) {
      if (positions[static_cast<std::size_t>(k)] == position) return ids[static_cast<std::size_t>(k)];
    }
    return std::nullopt;
  }
};

// Cells are padded with white to the largest width/height among the four.
inline MergedGrid merge_grid(const ContextView& view) {
  MergedGrid out;
  std::array<const Raster*, kContextSize> cells{};
  int cell_w = 0, cell_h = 0;
  for (int k = 0; k < kContextSize; ++k) {
    const auto& slot = view.slots[static_cast<std::size_t>(k)];
    if (slot.empty() || !slot.has_pixels()) {
      throw ContractError("merge_grid: image slot without pixels");
    }
    cells[static_cast<std::size_t>(k)] = &slot.raster();
    cell_w = std::max(cell_w, cells[static_cast<std::size_t>(k)]->width);
    cell_h = std::max(cell_h, cells[static_cast<std::size_t>(k)]->height);
    out.ids[static_cast<std::size_t>(k)] = slot.id();
  }
  out.image = Raster::solid(cell_w * 2, cell_h * 2, 255, 255, 255);
  for (int k = 0; k < kContextSize; ++k) {
    const Raster& src = *cells[static_cast<std::size_t>(k)];
    int ox = (k % 2) * cell_w, oy = (k / 2) * cell_h;
    for (int y = 0; y < src.height; ++y) {
      const std::uint8_t* src_row = src.rgb.data() + static_cast<std::size_t>(y) * src.width * 3;
      std::uint8_t* dst_row = out.image.rgb.data() +
                              (static_cast<std::size_t>(oy + y) * out.image.width + ox) * 3;
      std::copy(src_row, src_row + static_cast<std::size_t>(src.width) * 3, dst_row);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instruction templates. The game frames (trial headers, "Message:",
// feedback) are fixed; only the instruction paragraph is template data.
// ---------------------------------------------------------------------------

namespace builtin_templates {

inline constexpr std::string_view kS1 =
    "Play a game with a listener. This game consists of multiple trials and 4 images "
    "(labeled A, B, C, D). You will act as the speaker in this game. In each trial, one of "
    "the images is given as the target. You will generate a message to tell the listener "
    "which image is the target without mentioning any image label. The listener will try to "
    "choose the target correctly based on your message. You will know which image the "
    "listener guesses, so you may adjust your messages based on the listener's accuracy. "
    "Your reply should only contain the message and be shorter than 20 words. Do not "
    "mention any image's label (A, B, C, D) in your message.";

inline constexpr std::string_view kS2Extra =
    " Be cooperative: make your message informative enough for the listener to identify the "
    "target, but not more informative than necessary. Think about how the amount of "
    "information needed may change as more trials are completed and based on the listener's "
    "performance in previous trials.";

inline constexpr std::string_view kS3Extra =
    " As more trials are completed and as the listener understands you better, gradually "
    "condense your messages, making them shorter and shorter every trial.";

inline constexpr std::string_view kS4Extra =
    " When creating a shorter message for an image, try to extract salient tokens from the "
    "previous messages for this image rather than introducing new words. The short messages "
    "should still allow the listener to choose the target correctly. For each image, when "
    "you reach a message that cannot be further shortened, you should keep using that "
    "message for the rest of the game.";

inline constexpr std::string_view kListener =
    "Play a game with multiple trials involving the same set of images. In each trial, I "
    "will refer to one of the images with a message. You will guess which image I'm "
    "referring to. If present, the history of the previous trials may help you better "
    "understand how I refer to specific images.";

}  // namespace builtin_templates

class TemplateSet {
 public:
  static TemplateSet builtin() {
    TemplateSet t;
    using namespace builtin_templates;
    t.set("s1", std::string(kS1));
    t.set("s2", std::string(kS1) + std::string(kS2Extra));
    t.set("s3", std::string(kS1) + std::string(kS3Extra));
    t.set("s4", std::string(kS1) + std::string(kS3Extra) + std::string(kS4Extra));
    t.set("listener", std::string(kListener));
    return t;
  }

  // Loads {s1,s2,s3,s4,listener}.txt from a directory; missing files fall
  // back to the builtin text so a partial override directory is usable.
  static TemplateSet load_dir(const std::filesystem::path& dir) {
    TemplateSet t = builtin();
    for (const char* key : {"s1", "s2", "s3", "s4", "listener"}) {
      auto path = dir / (std::string(key) + ".txt");
      if (std::filesystem::exists(path)) {
        std::string text(trim(read_text_file(path)));
        validate_placeholders(text, path.string());
        t.set(key, std::move(text));
      }
    }
    return t;
  }

  const std::string& instruction(const std::string& key) const {
    auto it = texts_.find(key);
    if (it == texts_.end()) throw ConfigError("no instruction template for key: " + key);
    return it->second;
  }

  // Allowed placeholders: {trial}, {label}, {message}. Anything else in
  // single braces is a typo worth failing loudly on.
  static void validate_placeholders(std::string_view text, const std::string& origin) {
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string_view::npos) {
      std::size_t end = text.find('}', pos);
      if (end == std::string_view::npos) break;
      std::string_view name = text.substr(pos + 1, end - pos - 1);
      if (name != "trial" && name != "label" && name != "message") {
        throw ConfigError("unknown placeholder {" + std::string(name) + "} in " + origin);
      }
      pos = end + 1;
    }
  }

  static std::string expand(std::string_view text, int trial, std::string_view label,
                            std::string_view message) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t brace = text.find('{', pos);
      if (brace == std::string_view::npos) {
        out += text.substr(pos);
        break;
      }
      out += text.substr(pos, brace - pos);
      std::size_t end = text.find('}', brace);
      std::string_view name =
          end == std::string_view::npos ? std::string_view{} : text.substr(brace + 1, end - brace - 1);
      if (name == "trial") {
        out += std::to_string(trial);
        pos = end + 1;
      } else if (name == "label") {
        out += label;
        pos = end + 1;
      } else if (name == "message") {
        out += message;
        pos = end + 1;
      } else {
        out += '{';
        pos = brace + 1;
      }
    }
    return out;
  }

 private:
  void set(const std::string& key, std::string text) { texts_[key] = std::move(text); }
  std::map<std::string, std::string> texts_;
};

// ---------------------------------------------------------------------------
// Prompt assembly.
// ---------------------------------------------------------------------------

struct PromptSegment {
  enum class Kind { Text, Image };
  Kind kind = Kind::Text;
  std::string text;
  ImageRef image;

  static PromptSegment make_text(std::string t) {
    PromptSegment s;
    s.kind = Kind::Text;
    s.text = std::move(t);
    return s;
  }
  static PromptSegment make_image(ImageRef ref) {
    PromptSegment s;
    s.kind = Kind::Image;
    s.image = std::move(ref);
    return s;
  }
};

struct Prompt {
  std::vector<PromptSegment> segments;

  int image_count() const {
    int n = 0;
    for (const auto& s : segments) n += s.kind == PromptSegment::Kind::Image ? 1 : 0;
    return n;
  }

  // Text projection with a stand-in marker per image; used by text-only
  // scripted agents and debug dumps.
  std::string flat_text(std::string_view image_marker = "<image>") const {
    std::string out;
    for (const auto& s : segments) {
      if (s.kind == PromptSegment::Kind::Text) {
        out += s.text;
      } else {
        out += image_marker;
      }
    }
    return out;
  }
};

struct CurrentTrial {
  int trial_index = 0;
  ContextView view;        // display view for the acting role
  std::string gold_label;  // used by speaker prompts ("the target is Image X")
  std::string message;     // used by listener prompts (speaker's utterance)
};

struct BuildOptions {
  bool merge_context_grid = false;
};

namespace detail {

inline void append_text(Prompt& p, std::string text) {
  if (text.empty()) return;
  if (!p.segments.empty() && p.segments.back().kind == PromptSegment::Kind::Text) {
    p.segments.back().text += text;
  } else {
    p.segments.push_back(PromptSegment::make_text(std::move(text)));
  }
}

inline void append_image_block(Prompt& p, const ContextView& view, bool grid) {
  for (const auto& slot : view.slots) {
    if (slot.empty() || !slot.has_pixels()) {
      throw ContractError("context must be displayed but image '" + slot.id() +
                          "' has no pixels");
    }
  }
  if (grid) {
    MergedGrid merged = merge_grid(view);
    append_text(p, "Image: ");
    p.segments.push_back(
        PromptSegment::make_image(ImageRef::from_raster("grid", std::move(merged.image))));
    std::string caption = "\n";
    for (int k = 0; k < kContextSize; ++k) {
      caption += "Image " + view.labels[static_cast<std::size_t>(k)] + " is at the " +
                 kGridPositions[static_cast<std::size_t>(k)] +
                 (k + 1 < kContextSize ? ". " : ".\n");
    }
    append_text(p, caption);
    return;
  }
  for (int k = 0; k < kContextSize; ++k) {
    append_text(p, "Image " + view.labels[static_cast<std::size_t>(k)] + ": ");
    p.segments.push_back(PromptSegment::make_image(view.slots[static_cast<std::size_t>(k)]));
    append_text(p, "\n");
  }
}

// One speaker-side trial block. Layout follows the speaker prompt specimen:
//   Trial {t}, the target is Image {X}.
//   [Speaker] Message: {message}
//   [System] {feedback}
// with the image block (when re-displayed) preceding the trial header.
inline void append_speaker_trial(Prompt& p, int trial_index, const ContextView& view,
                                 const std::string& gold_label, const std::string* message,
                                 const std::string* selection, bool grid) {
  if (view.presented) {
    append_image_block(p, view, grid);
    append_text(p, "\n");
  }
  append_text(p, "Trial " + std::to_string(trial_index) + ", the target is Image " + gold_label +
                     ".\n");
  if (message == nullptr) {
    append_text(p, "[Speaker] Message:");
    return;
  }
  append_text(p, "[Speaker] Message: " + *message + "\n");
  append_text(p, "[System] " + render_feedback(*selection, gold_label, Role::Speaker) + "\n\n");
}

// One listener-side trial block, per the listener prompt specimen:
//   Trial {t}
//   Image A: <img> ... (when re-displayed)
//   Which image is this message referring to: {message}
//   [Listener] Image {L}
//   [System] {feedback}
inline void append_listener_trial(Prompt& p, int trial_index, const ContextView& view,
                                  const std::string& message, const std::string* selection,
                                  const std::string* gold_label, const std::string* raw_reply,
                                  bool grid) {
  append_text(p, "Trial " + std::to_string(trial_index) + "\n");
  if (view.presented) append_image_block(p, view, grid);
  append_text(p, "Which image is this message referring to: " + message + "\n");
  if (selection == nullptr) {
    append_text(p, "[Listener] Image");
    return;
  }
  bool valid = false;
  for (const auto& l : kLabels) valid = valid || l == *selection;
  if (valid) {
    append_text(p, "[Listener] Image " + *selection + "\n");
  } else {
    // Unparseable reply: replay it verbatim (trimmed) so the history stays
    // faithful to what the agent actually said.
    std::string shown(trim(raw_reply != nullptr && !raw_reply->empty() ? *raw_reply : *selection));
    append_text(p, "[Listener] " + shown + "\n");
  }
  append_text(p, "[System] " + render_feedback(*selection, *gold_label, Role::Listener) + "\n\n");
}

}  // namespace detail

// Prompt construction: instruction, history blocks in order, then the open
// current-trial block. Pure function of its arguments.
inline Prompt build_prompt(const Variant& variant, const TemplateSet& templates,
                           std::span<const TrialRecord> history, const CurrentTrial& current,
                           Role role, const BuildOptions& options = {}) {
  if (variant.history_policy == HistoryPolicy::None && !history.empty()) {
    throw ContractError("variant " + variant.name + " carries no history, but " +
                        std::to_string(history.size()) + " prior trials were supplied");
  }
  Prompt p;
  const std::string& raw_instruction = templates.instruction(variant.instruction_key);
  std::string instruction = TemplateSet::expand(
      raw_instruction, current.trial_index, role == Role::Speaker ? current.gold_label : "",
      role == Role::Listener ? current.message : "");
  detail::append_text(p, "[System] " + instruction + "\n\n");

  for (const TrialRecord& t : history) {
    const ContextView& view = role == Role::Speaker ? t.speaker_view : t.listener_view;
    if (role == Role::Speaker) {
      detail::append_speaker_trial(p, t.trial_index, view, t.gold_label, &t.message, &t.selection,
                                   options.merge_context_grid);
    } else {
      detail::append_listener_trial(p, t.trial_index, view, t.message, &t.selection, &t.gold_label,
                                    &t.raw_listener, options.merge_context_grid);
    }
  }

  // An isolated trial renders as a fresh one-trial conversation.
  int shown_index =
      variant.context_policy == ContextPolicy::IsolatedTrial ? 1 : current.trial_index;
  if (role == Role::Speaker) {
    detail::append_speaker_trial(p, shown_index, current.view, current.gold_label, nullptr,
                                 nullptr, options.merge_context_grid);
  } else {
    detail::append_listener_trial(p, shown_index, current.view, current.message, nullptr, nullptr,
                                  nullptr, options.merge_context_grid);
  }
  return p;
}

}  // namespace icca
