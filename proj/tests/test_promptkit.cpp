#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "icca/promptkit.hpp"
#include "testutil.hpp"

using namespace icca;

namespace {

std::array<ImageRef, kContextSize> color_context() {
  return {ImageRef::from_raster("i1", Raster::solid(2, 2, 255, 0, 0)),
          ImageRef::from_raster("i2", Raster::solid(2, 2, 0, 255, 0)),
          ImageRef::from_raster("i3", Raster::solid(2, 2, 0, 0, 255)),
          ImageRef::from_raster("i4", Raster::solid(2, 2, 255, 255, 0))};
}

}  // namespace

TEST_CASE("variant registry encodes the eleven designs") {
  const auto& all = variant_registry();
  REQUIRE(all.size() == 11);
  std::set<std::string> names;
  for (const Variant& v : all) names.insert(v.name);
  CHECK(names == std::set<std::string>{"S1", "S2", "S3", "S4", "L1", "L2", "L3", "L4", "L5",
                                       "L6", "L7"});

  // Speaker variants differ only in instruction text.
  for (const char* s : {"S1", "S2", "S3", "S4"}) {
    const Variant& v = find_variant(s);
    CHECK(v.model_role == Role::Speaker);
    CHECK(v.context_policy == ContextPolicy::OnceAtStart);
    CHECK(v.history_policy == HistoryPolicy::Full);
    CHECK(v.manipulation == Manipulation::None);
  }
  CHECK(find_variant("L1").context_policy == ContextPolicy::EveryTrialShuffled);
  CHECK(find_variant("L2").history_policy == HistoryPolicy::None);
  CHECK(find_variant("L3").context_policy == ContextPolicy::OnceAtStart);
  CHECK(find_variant("L4").context_policy == ContextPolicy::EveryTrialFixed);
  CHECK(find_variant("L5").manipulation == Manipulation::MaskAll);
  CHECK(find_variant("L6").manipulation == Manipulation::MisleadAll);
  CHECK(find_variant("L7").manipulation == Manipulation::MisleadLastRep);
  CHECK_THROWS_AS(find_variant("L9"), ConfigError);
}

TEST_CASE("label assignment: fixed policies are identity, shuffled is seeded") {
  for (ContextPolicy p : {ContextPolicy::OnceAtStart, ContextPolicy::EveryTrialFixed,
                          ContextPolicy::IsolatedTrial}) {
    CHECK(assign_labels("x", 17, p, 123).is_identity());
  }
  LabelAssignment a = assign_labels("x", 3, ContextPolicy::EveryTrialShuffled, 1);
  LabelAssignment b = assign_labels("x", 3, ContextPolicy::EveryTrialShuffled, 1);
  CHECK(a.slot_at == b.slot_at);
  // Different trials and interactions draw independent permutations; over 24
  // trials at least one must differ from trial 3's.
  bool any_differs = false;
  for (int t = 1; t <= kTrialsPerGame; ++t) {
    any_differs =
        any_differs || assign_labels("x", t, ContextPolicy::EveryTrialShuffled, 1).slot_at != a.slot_at;
  }
  CHECK(any_differs);
}

TEST_CASE("shuffled label sequence matches the frozen golden file") {
  std::string golden = read_text_file(std::filesystem::path(ICCA_SOURCE_DIR) /
                                      "tests/golden/label_assignments.txt");
  std::string produced;
  for (int t = 1; t <= kTrialsPerGame; ++t) {
    LabelAssignment a = assign_labels("x", t, ContextPolicy::EveryTrialShuffled, 1);
    produced += std::to_string(t) + ":";
    for (int k = 0; k < kContextSize; ++k) {
      produced += " " + std::to_string(a.slot_at[static_cast<std::size_t>(k)]);
    }
    produced += "\n";
  }
  // Strip the golden file's comment lines before comparing.
  std::string expected;
  for (const std::string& line : split_lines(golden)) {
    if (!line.empty() && line[0] != '#') expected += line + "\n";
  }
  CHECK(produced == expected);
}

TEST_CASE("masking blacks out every displayed raster at original size") {
  auto ctx = color_context();
  ContextView view = make_view(ctx, LabelAssignment{}, true);
  ContextView masked = apply_manipulation(view, Manipulation::MaskAll, "g", 1, 5);
  for (int k = 0; k < kContextSize; ++k) {
    const Raster& r = masked.slots[static_cast<std::size_t>(k)].raster();
    CHECK(r.width == 2);
    CHECK(r.height == 2);
    CHECK(r.is_uniform());
    CHECK(r.pixel(0, 0)[0] == 0);
    CHECK(r.pixel(0, 0)[1] == 0);
    CHECK(r.pixel(0, 0)[2] == 0);
    // Identity is preserved: the masked slot still names the same image.
    CHECK(masked.slots[static_cast<std::size_t>(k)].id() == view.slots[static_cast<std::size_t>(k)].id());
  }
  ContextView untouched = apply_manipulation(view, Manipulation::None, "g", 1, 5);
  for (int k = 0; k < kContextSize; ++k) {
    CHECK(untouched.slots[static_cast<std::size_t>(k)].raster().pixel(0, 0)[0] ==
          view.slots[static_cast<std::size_t>(k)].raster().pixel(0, 0)[0]);
  }
}

TEST_CASE("mislead permutations are never identity and are deterministic") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto p = mislead_permutation("game", 0, seed);
    bool identity = true;
    for (int k = 0; k < kContextSize; ++k) identity = identity && p[static_cast<std::size_t>(k)] == k;
    CHECK_FALSE(identity);
    CHECK(p == mislead_permutation("game", 0, seed));
  }
}

TEST_CASE("misleading display moves pixels but keeps labels and gold mapping") {
  auto ctx = color_context();
  ContextView gold_view = make_view(ctx, LabelAssignment{}, true);
  ContextView shown = apply_manipulation(gold_view, Manipulation::MisleadAll, "g", 1, 5);

  // Labels stay A..D in place; at least one slot shows a different image.
  CHECK(shown.labels == gold_view.labels);
  int moved = 0;
  for (int k = 0; k < kContextSize; ++k) {
    if (shown.slots[static_cast<std::size_t>(k)].id() != gold_view.slots[static_cast<std::size_t>(k)].id()) {
      ++moved;
    }
  }
  CHECK(moved >= 2);  // a non-identity permutation displaces at least two

  // The feedback label comes from the unmanipulated view: for a moved
  // target, the displayed label of its pixels disagrees with the gold label.
  std::string target = "i1";
  std::string gold_label = gold_view.label_of(target).value();
  std::string displayed_label = shown.label_of(target).value();
  std::string feedback = render_feedback(displayed_label, gold_label, Role::Listener);
  if (displayed_label != gold_label) {
    CHECK(feedback == "Wrong. I was referring to Image " + gold_label + ".");
  }
  // Same manipulation, same seed: the run is reproducible.
  ContextView again = apply_manipulation(gold_view, Manipulation::MisleadAll, "g", 1, 5);
  for (int k = 0; k < kContextSize; ++k) {
    CHECK(again.slots[static_cast<std::size_t>(k)].id() == shown.slots[static_cast<std::size_t>(k)].id());
  }
}

TEST_CASE("mislead-last-rep manipulates only repetition 6") {
  auto ctx = color_context();
  ContextView view = make_view(ctx, LabelAssignment{}, true);
  for (int t = 1; t <= 20; ++t) {
    ContextView shown = apply_manipulation(view, Manipulation::MisleadLastRep, "g", t, 5);
    for (int k = 0; k < kContextSize; ++k) {
      CHECK(shown.slots[static_cast<std::size_t>(k)].id() == view.slots[static_cast<std::size_t>(k)].id());
    }
  }
  for (int t = 21; t <= 24; ++t) {
    ContextView shown = apply_manipulation(view, Manipulation::MisleadLastRep, "g", t, 5);
    bool identity = true;
    for (int k = 0; k < kContextSize; ++k) {
      identity = identity &&
                 shown.slots[static_cast<std::size_t>(k)].id() == view.slots[static_cast<std::size_t>(k)].id();
    }
    CHECK_FALSE(identity);
  }
}

TEST_CASE("feedback strings match the conversation transcripts") {
  CHECK(render_feedback("B", "B", Role::Listener) == "Correct. I was referring to Image B.");
  CHECK(render_feedback("A", "D", Role::Listener) == "Wrong. I was referring to Image D.");
  CHECK(render_feedback(kInvalidSelection, "D", Role::Listener) ==
        "Wrong. I was referring to Image D.");
  CHECK(render_feedback("B", "B", Role::Speaker) == "The listener correctly answered Image B.");
  CHECK(render_feedback("C", "B", Role::Speaker) == "The listener mistakenly answered Image C.");
  CHECK(render_feedback(kInvalidSelection, "B", Role::Speaker) ==
        "The listener mistakenly answered Image B.");
}

TEST_CASE("merge_grid tiles 2x2 row-major with a position map") {
  auto ctx = color_context();
  ContextView view = make_view(ctx, LabelAssignment{}, true);
  MergedGrid grid = merge_grid(view);
  CHECK(grid.image.width == 4);
  CHECK(grid.image.height == 4);
  // Quadrants: red | green / blue | yellow.
  CHECK(grid.image.pixel(0, 0)[0] == 255);  // top-left red
  CHECK(grid.image.pixel(2, 0)[1] == 255);  // top-right green
  CHECK(grid.image.pixel(0, 2)[2] == 255);  // bottom-left blue
  CHECK(grid.image.pixel(2, 2)[0] == 255);  // bottom-right yellow(r)
  CHECK(grid.image.pixel(2, 2)[1] == 255);  // bottom-right yellow(g)

  REQUIRE(grid.positions.size() == 4);
  CHECK(grid.positions[0] == "top left");
  CHECK(grid.positions[3] == "bottom right");
  for (std::size_t k = 0; k < 4; ++k) {
    // position -> id -> position round trip
    CHECK(grid.position_of(grid.ids[k]).value() == grid.positions[k]);
    CHECK(grid.id_at(grid.positions[k]).value() == grid.ids[k]);
  }
}

TEST_CASE("merge_grid pads mismatched sizes onto a common cell") {
  std::array<ImageRef, kContextSize> ctx = {
      ImageRef::from_raster("i1", Raster::solid(2, 2, 255, 0, 0)),
      ImageRef::from_raster("i2", Raster::solid(4, 2, 0, 255, 0)),
      ImageRef::from_raster("i3", Raster::solid(2, 4, 0, 0, 255)),
      ImageRef::from_raster("i4", Raster::solid(4, 4, 255, 255, 0))};
  MergedGrid grid = merge_grid(make_view(ctx, LabelAssignment{}, true));
  CHECK(grid.image.width == 8);   // two 4-wide cells
  CHECK(grid.image.height == 8);  // two 4-tall cells
}

TEST_CASE("speaker prompt bytes: instruction, images, open message slot") {
  auto ctx = color_context();
  CurrentTrial current{1, make_view(ctx, LabelAssignment{}, true), "B", ""};
  TemplateSet templates = TemplateSet::builtin();
  Prompt p = build_prompt(find_variant("S1"), templates, {}, current, Role::Speaker);
  CHECK(p.image_count() == 4);
  std::string expected = "[System] " + templates.instruction("s1") +
                         "\n\n"
                         "Image A: <IMG>\n"
                         "Image B: <IMG>\n"
                         "Image C: <IMG>\n"
                         "Image D: <IMG>\n"
                         "\n"
                         "Trial 1, the target is Image B.\n"
                         "[Speaker] Message:";
  CHECK(p.flat_text("<IMG>") == expected);
}

TEST_CASE("speaker history bytes: message, feedback, then the next trial") {
  auto ctx = color_context();
  TemplateSet templates = TemplateSet::builtin();

  TrialRecord first;
  first.trial_index = 1;
  first.repetition = 1;
  first.speaker_view = make_view(ctx, LabelAssignment{}, true);
  first.listener_view = first.speaker_view;
  first.target_id = "i2";
  first.gold_label = "B";
  first.message = "the green one";
  first.selection = "C";
  first.correct = false;

  CurrentTrial current{2, make_view(ctx, LabelAssignment{}, false), "A", ""};
  Prompt p = build_prompt(find_variant("S1"), templates,
                          std::span<const TrialRecord>(&first, 1), current, Role::Speaker);
  std::string expected = "[System] " + templates.instruction("s1") +
                         "\n\n"
                         "Image A: <IMG>\n"
                         "Image B: <IMG>\n"
                         "Image C: <IMG>\n"
                         "Image D: <IMG>\n"
                         "\n"
                         "Trial 1, the target is Image B.\n"
                         "[Speaker] Message: the green one\n"
                         "[System] The listener mistakenly answered Image C.\n"
                         "\n"
                         "Trial 2, the target is Image A.\n"
                         "[Speaker] Message:";
  CHECK(p.flat_text("<IMG>") == expected);
}

TEST_CASE("listener prompt bytes: question first trial, history with feedback") {
  auto ctx = color_context();
  TemplateSet templates = TemplateSet::builtin();

  TrialRecord first;
  first.trial_index = 1;
  first.repetition = 1;
  first.listener_view = make_view(ctx, LabelAssignment{}, true);
  first.speaker_view = first.listener_view;
  first.target_id = "i4";
  first.gold_label = "D";
  first.message = "bright yellow";
  first.selection = "D";
  first.correct = true;

  CurrentTrial current{2, make_view(ctx, LabelAssignment{}, false), "", "the red one"};
  Prompt p = build_prompt(find_variant("L3"), templates,
                          std::span<const TrialRecord>(&first, 1), current, Role::Listener);
  std::string expected = "[System] " + templates.instruction("listener") +
                         "\n\n"
                         "Trial 1\n"
                         "Image A: <IMG>\n"
                         "Image B: <IMG>\n"
                         "Image C: <IMG>\n"
                         "Image D: <IMG>\n"
                         "Which image is this message referring to: bright yellow\n"
                         "[Listener] Image D\n"
                         "[System] Correct. I was referring to Image D.\n"
                         "\n"
                         "Trial 2\n"
                         "Which image is this message referring to: the red one\n"
                         "[Listener] Image";
  CHECK(p.flat_text("<IMG>") == expected);
}

TEST_CASE("unparseable listener replies replay verbatim in the history") {
  auto ctx = color_context();
  TemplateSet templates = TemplateSet::builtin();
  TrialRecord first;
  first.trial_index = 1;
  first.repetition = 1;
  first.listener_view = make_view(ctx, LabelAssignment{}, true);
  first.speaker_view = first.listener_view;
  first.target_id = "i1";
  first.gold_label = "A";
  first.message = "red";
  first.selection = kInvalidSelection;
  first.raw_listener = "  I cannot decide between these.  ";
  first.correct = false;

  CurrentTrial current{2, make_view(ctx, LabelAssignment{}, false), "", "red again"};
  Prompt p = build_prompt(find_variant("L3"), templates,
                          std::span<const TrialRecord>(&first, 1), current, Role::Listener);
  std::string flat = p.flat_text("<IMG>");
  CHECK(flat.find("[Listener] I cannot decide between these.\n") != std::string::npos);
  CHECK(flat.find("[System] Wrong. I was referring to Image A.\n") != std::string::npos);
  CHECK(flat.find("INVALID") == std::string::npos);  // the marker never leaks into prompts
}

TEST_CASE("isolated trials render as a fresh first trial") {
  auto ctx = color_context();
  TemplateSet templates = TemplateSet::builtin();
  CurrentTrial current{17, make_view(ctx, LabelAssignment{}, true), "", "green thing"};
  Prompt p = build_prompt(find_variant("L2"), templates, {}, current, Role::Listener);
  std::string flat = p.flat_text("<IMG>");
  CHECK(flat.find("Trial 1\n") != std::string::npos);
  CHECK(flat.find("Trial 17") == std::string::npos);
  CHECK(p.image_count() == 4);

  TrialRecord stray = testutil::tiny_interaction().trials[0];
  CHECK_THROWS_AS(build_prompt(find_variant("L2"), templates,
                               std::span<const TrialRecord>(&stray, 1), current, Role::Listener),
                  ContractError);
}

TEST_CASE("image growth: shuffled redisplay accumulates 4 per trial") {
  auto ctx = color_context();
  TemplateSet templates = TemplateSet::builtin();
  std::vector<TrialRecord> history;
  for (int t = 1; t <= kTrialsPerGame; ++t) {
    LabelAssignment assign = assign_labels("g", t, ContextPolicy::EveryTrialShuffled, 3);
    CurrentTrial current{t, make_view(ctx, assign, true), "", "msg"};
    Prompt p = build_prompt(find_variant("L1"), templates,
                            std::span<const TrialRecord>(history), current, Role::Listener);
    CHECK(p.image_count() == 4 * t);

    TrialRecord r;
    r.trial_index = t;
    r.repetition = repetition_of_trial(t);
    r.listener_view = current.view;
    r.speaker_view = current.view;
    r.target_id = "i1";
    r.gold_label = current.view.label_of("i1").value();
    r.message = "msg";
    r.selection = r.gold_label;
    r.correct = true;
    history.push_back(std::move(r));
  }
}

TEST_CASE("once-at-start keeps every prompt at exactly 4 images") {
  auto ctx = color_context();
  TemplateSet templates = TemplateSet::builtin();
  std::vector<TrialRecord> history;
  for (int t = 1; t <= kTrialsPerGame; ++t) {
    const Variant& v = find_variant("L3");
    CurrentTrial current{t, make_view(ctx, LabelAssignment{}, context_presented(v, t)), "", "msg"};
    Prompt p = build_prompt(v, templates, std::span<const TrialRecord>(history), current,
                            Role::Listener);
    CHECK(p.image_count() == 4);

    TrialRecord r;
    r.trial_index = t;
    r.repetition = repetition_of_trial(t);
    r.listener_view = current.view;
    r.speaker_view = current.view;
    r.target_id = "i1";
    r.gold_label = "A";
    r.message = "msg";
    r.selection = "A";
    r.correct = true;
    history.push_back(std::move(r));
  }
}

TEST_CASE("prompt building is a pure function") {
  auto ctx = color_context();
  TemplateSet templates = TemplateSet::builtin();
  CurrentTrial current{1, make_view(ctx, LabelAssignment{}, true), "C", ""};
  Prompt a = build_prompt(find_variant("S2"), templates, {}, current, Role::Speaker);
  Prompt b = build_prompt(find_variant("S2"), templates, {}, current, Role::Speaker);
  CHECK(a.flat_text() == b.flat_text());
  CHECK(a.image_count() == b.image_count());
}

TEST_CASE("grid mode presents one merged image with a position caption") {
  auto ctx = color_context();
  TemplateSet templates = TemplateSet::builtin();
  CurrentTrial current{1, make_view(ctx, LabelAssignment{}, true), "", "red block"};
  Prompt p = build_prompt(find_variant("L3"), templates, {}, current, Role::Listener, {true});
  CHECK(p.image_count() == 1);
  std::string flat = p.flat_text("<IMG>");
  CHECK(flat.find("Image: <IMG>") != std::string::npos);
  CHECK(flat.find("Image A is at the top left. Image B is at the top right. "
                  "Image C is at the bottom left. Image D is at the bottom right.") !=
        std::string::npos);
}

TEST_CASE("displaying a context without pixels is a contract error") {
  std::array<ImageRef, kContextSize> ctx = {ImageRef::from_id("a"), ImageRef::from_id("b"),
                                            ImageRef::from_id("c"), ImageRef::from_id("d")};
  TemplateSet templates = TemplateSet::builtin();
  CurrentTrial current{1, make_view(ctx, LabelAssignment{}, true), "", "msg"};
  CHECK_THROWS_AS(build_prompt(find_variant("L3"), templates, {}, current, Role::Listener),
                  ContractError);
}

TEST_CASE("instruction templates: placeholders validated, files match builtins") {
  CHECK_THROWS_AS(TemplateSet::validate_placeholders("hello {target}", "t"), ConfigError);
  CHECK_NOTHROW(TemplateSet::validate_placeholders("trial {trial} label {label} msg {message}", "t"));
  CHECK(TemplateSet::expand("t{trial} l{label} m{message}", 7, "B", "hi") == "t7 lB mhi");

  TemplateSet from_files =
      TemplateSet::load_dir(std::filesystem::path(ICCA_SOURCE_DIR) / "data/templates");
  TemplateSet builtin = TemplateSet::builtin();
  for (const char* key : {"s1", "s2", "s3", "s4", "listener"}) {
    CHECK(from_files.instruction(key) == builtin.instruction(key));
  }
}

TEST_CASE("partial template directories fall back to builtin texts") {
  testutil::TempDir tmp("templates");
  write_text_file(tmp.path() / "s1.txt", "Custom speaker instruction.");
  TemplateSet t = TemplateSet::load_dir(tmp.path());
  CHECK(t.instruction("s1") == "Custom speaker instruction.");
  CHECK(t.instruction("listener") == TemplateSet::builtin().instruction("listener"));
  write_text_file(tmp.path() / "s2.txt", "bad {placeholder}");
  CHECK_THROWS_AS(TemplateSet::load_dir(tmp.path()), ConfigError);
}

TEST_CASE("speaker instructions grow from shared base text") {
  TemplateSet t = TemplateSet::builtin();
  const std::string& s1 = t.instruction("s1");
  CHECK(t.instruction("s2").rfind(s1, 0) == 0);
  CHECK(t.instruction("s3").rfind(s1, 0) == 0);
  CHECK(t.instruction("s4").rfind(t.instruction("s3"), 0) == 0);
  CHECK(t.instruction("s2").find("informative enough") != std::string::npos);
  CHECK(t.instruction("s3").find("shorter and shorter") != std::string::npos);
  CHECK(t.instruction("s4").find("salient tokens") != std::string::npos);
}
