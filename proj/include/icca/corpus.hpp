#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icca/core.hpp"
#include "icca/image.hpp"
#include "icca/promptkit.hpp"
#include "icca/util.hpp"

namespace icca {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Manifest: {version, interactions:[{id, trials_file, images_dir}]}.
// Relative paths resolve against the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::filesystem::path trials_file;
  std::filesystem::path images_dir;
};

struct CorpusManifest {
  int version = 1;
  std::vector<ManifestEntry> entries;

  static CorpusManifest load_file(const std::filesystem::path& path) {
    ordered_json j = ordered_json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("interactions")) {
      throw ConfigError("manifest is not a JSON object with \"interactions\": " + path.string());
    }
    CorpusManifest m;
    m.version = j.value("version", 1);
    std::filesystem::path base = path.parent_path();
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    for (const auto& e : j["interactions"]) {
      if (!e.contains("id") || !e.contains("trials_file")) {
        throw ConfigError("manifest entry needs \"id\" and \"trials_file\": " + path.string());
      }
      ManifestEntry entry;
      entry.id = e["id"].get<std::string>();
      entry.trials_file = resolve(e["trials_file"].get<std::string>());
      if (e.contains("images_dir") && !e["images_dir"].get<std::string>().empty()) {
        entry.images_dir = resolve(e["images_dir"].get<std::string>());
      }
      m.entries.push_back(std::move(entry));
    }
    return m;
  }

  // Paths are written relative to the manifest's directory when possible.
  void write_file(const std::filesystem::path& path) const {
    ordered_json j;
    j["version"] = version;
    j["interactions"] = ordered_json::array();
    std::filesystem::path base = path.parent_path();
    auto relativize = [&](const std::filesystem::path& p) {
      std::error_code ec;
      auto rel = std::filesystem::relative(p, base, ec);
      return ec || rel.empty() ? p.generic_string() : rel.generic_string();
    };
    for (const ManifestEntry& e : entries) {
      ordered_json o;
      o["id"] = e.id;
      o["trials_file"] = relativize(e.trials_file);
      o["images_dir"] = e.images_dir.empty() ? "" : relativize(e.images_dir);
      j["interactions"].push_back(std::move(o));
    }
    write_text_file(path, j.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// Trials JSONL: one object per trial with keys {trial, repetition,
// context_ids, labels, target_id, message, selection, correct}. Unknown keys
// survive a load/write round trip untouched.
// ---------------------------------------------------------------------------

namespace detail {

inline const std::set<std::string>& known_trial_keys() {
  static const std::set<std::string> keys = {"trial",   "repetition", "context_ids",
                                             "labels",  "target_id",  "message",
                                             "selection", "correct"};
  return keys;
}

inline ordered_json trial_to_json(const TrialRecord& t) {
  ordered_json o;
  o["trial"] = t.trial_index;
  o["repetition"] = t.repetition;
  ordered_json ids = ordered_json::array();
  ordered_json labels = ordered_json::array();
  for (int k = 0; k < kContextSize; ++k) {
    ids.push_back(t.listener_view.slots[static_cast<std::size_t>(k)].id());
    labels.push_back(t.listener_view.labels[static_cast<std::size_t>(k)]);
  }
  o["context_ids"] = std::move(ids);
  o["labels"] = std::move(labels);
  o["target_id"] = t.target_id;
  o["message"] = t.message;
  o["selection"] = t.selection;
  o["correct"] = t.correct;
  if (!t.extra.empty()) {
    ordered_json extra = ordered_json::parse(t.extra, nullptr, false);
    if (extra.is_object()) {
      for (auto& [k, v] : extra.items()) o[k] = v;
    }
  }
  return o;
}

}  // namespace detail

inline std::string interaction_to_jsonl(const Interaction& in) {
  std::string out;
  for (const TrialRecord& t : in.trials) {
    out += detail::trial_to_json(t).dump();
    out += '\n';
  }
  return out;
}

inline void write_interaction_file(const Interaction& in, const std::filesystem::path& path) {
  write_text_file(path, interaction_to_jsonl(in));
}

// Loads one interaction; throws on any malformed trial. Images decode
// eagerly so a broken file fails at load, not mid-run. Passing an empty
// images_dir yields pixel-free refs (enough for metrics over recorded runs).
inline Interaction load_interaction_file(const std::string& id,
                                         const std::filesystem::path& trials_file,
                                         const std::filesystem::path& images_dir) {
  Interaction in;
  in.id = id;
  in.source = Source::HumanCorpus;

  std::map<std::string, ImageRef> refs;
  auto ref_for = [&](const std::string& image_id) {
    auto it = refs.find(image_id);
    if (it != refs.end()) return it->second;
    ImageRef ref = images_dir.empty()
                       ? ImageRef::from_id(image_id)
                       : ImageRef::from_file(image_id, images_dir / (image_id + ".png"));
    refs.emplace(image_id, ref);
    return ref;
  };

  std::string content = read_text_file(trials_file);
  int line_no = 0;
  auto where = [&] { return trials_file.string() + ":" + std::to_string(line_no) + " (" + id + ")"; };
  for (const std::string& line : split_lines(content)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ordered_json o = ordered_json::parse(line, nullptr, false);
    if (o.is_discarded() || !o.is_object()) {
      throw ParseError(where() + ": not a JSON object");
    }
    for (const char* key : {"trial", "repetition", "context_ids", "labels", "target_id",
                            "message", "selection", "correct"}) {
      if (!o.contains(key)) throw ParseError(where() + ": missing key \"" + key + "\"");
    }
    TrialRecord t;
    t.trial_index = o["trial"].get<int>();
    t.repetition = o["repetition"].get<int>();
    auto& ids = o["context_ids"];
    auto& labels = o["labels"];
    if (!ids.is_array() || ids.size() != kContextSize || !labels.is_array() ||
        labels.size() != kContextSize) {
      throw ParseError(where() + ": context_ids/labels must be arrays of 4");
    }
    ContextView view;
    for (int k = 0; k < kContextSize; ++k) {
      view.slots[static_cast<std::size_t>(k)] = ref_for(ids[static_cast<std::size_t>(k)].get<std::string>());
      view.labels[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(k)].get<std::string>();
    }
    t.target_id = o["target_id"].get<std::string>();
    t.message = o["message"].get<std::string>();
    t.selection = o["selection"].get<std::string>();
    bool stored_correct = o["correct"].get<bool>();

    auto gold = view.label_of(t.target_id);
    if (!gold) throw ParseError(where() + ": target_id " + t.target_id + " not in context_ids");
    t.gold_label = *gold;
    t.correct = t.selection == t.gold_label;
    if (t.correct != stored_correct) {
      throw ParseError(where() + ": stored correct flag contradicts selection vs target label");
    }
    t.feedback_text = render_feedback(t.selection, t.gold_label, Role::Listener);
    t.speaker_view = view;
    t.listener_view = view;

    ordered_json extra = ordered_json::object();
    for (auto& [k, v] : o.items()) {
      if (detail::known_trial_keys().count(k) == 0) extra[k] = v;
    }
    if (!extra.empty()) t.extra = extra.dump();

    in.trials.push_back(std::move(t));
  }

  if (in.trials.empty()) throw ParseError(trials_file.string() + ": no trials (" + id + ")");
  // Canonical context order comes from the first trial's display order.
  in.context = in.trials.front().listener_view.slots;
  if (!images_dir.empty()) {
    for (const ImageRef& ref : in.context) {
      const Raster& px = ref.raster();  // eager decode; throws LoadError on failure
      if (px.width <= 0 || px.height <= 0) {
        throw LoadError("image '" + ref.id() + "' decoded empty");
      }
    }
  }
  return in;
}

struct LoadReport {
  std::vector<Interaction> interactions;
  std::vector<std::string> errors;  // one entry per rejected interaction
};

// Failures are isolated per interaction: one bad file ends up in `errors`
// and the rest still load.
inline LoadReport load_corpus(const std::filesystem::path& manifest_path) {
  CorpusManifest manifest = CorpusManifest::load_file(manifest_path);
  LoadReport report;
  for (const ManifestEntry& entry : manifest.entries) {
    try {
      Interaction in = load_interaction_file(entry.id, entry.trials_file, entry.images_dir);
      std::vector<Violation> violations = validate_interaction(in);
      if (!violations.empty()) {
        std::string msg = entry.id + ": " + std::to_string(violations.size()) + " violation(s):";
        for (std::size_t i = 0; i < violations.size() && i < 3; ++i) {
          msg += " [trial " + std::to_string(violations[i].trial) + "] " + violations[i].rule + ";";
        }
        report.errors.push_back(std::move(msg));
        continue;
      }
      report.interactions.push_back(std::move(in));
    } catch (const Error& e) {
      report.errors.push_back(entry.id + ": " + e.what());
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures. Contexts are four solid-color images; every message
// names its image's color in the first word, so a pixel-matching listener
// can act on message content alone.
// ---------------------------------------------------------------------------

enum class SyntheticProfile { Converging, Repeating, Random };

inline SyntheticProfile synthetic_profile_from_name(std::string_view name) {
  if (name == "converging") return SyntheticProfile::Converging;
  if (name == "repeating") return SyntheticProfile::Repeating;
  if (name == "random") return SyntheticProfile::Random;
  throw ConfigError("unknown synthetic profile: " + std::string(name));
}

inline const char* to_string(SyntheticProfile p) {
  switch (p) {
    case SyntheticProfile::Converging: return "converging";
    case SyntheticProfile::Repeating: return "repeating";
    case SyntheticProfile::Random: return "random";
  }
  return "?";
}

inline Interaction generate_synthetic(std::uint64_t seed, SyntheticProfile profile) {
  Interaction in;
  in.id = std::string("synthetic-") + to_string(profile) + "-" + std::to_string(seed);
  in.source = Source::Simulated;

  Rng color_rng(derive_seed(seed, "synthetic-colors"));
  std::vector<int> palette_order = random_permutation(static_cast<int>(kPalette.size()), color_rng);
  std::array<const NamedColor*, kContextSize> colors{};
  for (int k = 0; k < kContextSize; ++k) {
    colors[static_cast<std::size_t>(k)] = &kPalette[static_cast<std::size_t>(
        palette_order[static_cast<std::size_t>(k)])];
    const NamedColor& c = *colors[static_cast<std::size_t>(k)];
    in.context[static_cast<std::size_t>(k)] = ImageRef::from_raster(
        "img-" + std::string(c.name), Raster::solid(32, 32, c.r, c.g, c.b));
  }

  // Long descriptions whose word prefixes stay meaningful; the color word
  // comes first so truncation never loses it.
  static const char* kTail[] = {"square", "painted", "evenly", "filled", "matte",
                                "finish", "displayed"};
  constexpr int kTailWords = 7;

  Rng message_rng(derive_seed(seed, "synthetic-messages", 0, seed_purpose::kMessage));
  static const char* kBank[] = {"solid",  "block",   "swatch", "panel",  "tile",
                                "field",  "patch",   "chip",   "card",   "plate",
                                "sample", "surface", "sheet",  "canvas", "slab"};
  std::set<std::string> used;

  auto message_for = [&](int slot, int rep) {
    const std::string color(colors[static_cast<std::size_t>(slot)]->name);
    switch (profile) {
      case SyntheticProfile::Converging: {
        // Repetition r keeps the first (1 + kTailWords - r) words.
        int words = 1 + kTailWords - rep;
        std::string msg = color;
        for (int w = 0; w < words - 1; ++w) msg += std::string(" ") + kTail[w];
        return msg;
      }
      case SyntheticProfile::Repeating: {
        std::string msg = color;
        for (int w = 0; w < 3; ++w) {
          msg += std::string(" ") + kBank[message_rng.bounded(std::size(kBank))];
        }
        return msg;
      }
      case SyntheticProfile::Random: {
        for (;;) {
          std::string msg = color;
          for (int w = 0; w < 3; ++w) {
            msg += std::string(" ") + kBank[message_rng.bounded(std::size(kBank))];
          }
          if (used.insert(msg).second) return msg;
        }
      }
    }
    return color;
  };

  // Fixed repetition-1 message per image for the REPEATING profile.
  std::array<std::string, kContextSize> repeating_message;
  if (profile == SyntheticProfile::Repeating) {
    for (int k = 0; k < kContextSize; ++k) {
      repeating_message[static_cast<std::size_t>(k)] = message_for(k, 1);
    }
  }

  LabelAssignment identity;
  for (int rep = 1; rep <= kRepetitions; ++rep) {
    Rng schedule_rng(derive_seed(seed, in.id, static_cast<std::uint64_t>(rep),
                                 seed_purpose::kSchedule));
    std::vector<int> order = random_permutation(kContextSize, schedule_rng);
    for (int k = 0; k < kContextSize; ++k) {
      int slot = order[static_cast<std::size_t>(k)];
      TrialRecord t;
      t.trial_index = (rep - 1) * kContextSize + k + 1;
      t.repetition = rep;
      ContextView view = make_view(in.context, identity, t.trial_index == 1);
      t.speaker_view = view;
      t.listener_view = view;
      t.target_id = in.context[static_cast<std::size_t>(slot)].id();
      t.gold_label = kLabels[static_cast<std::size_t>(slot)];
      t.message = profile == SyntheticProfile::Repeating
                      ? repeating_message[static_cast<std::size_t>(slot)]
                      : message_for(slot, rep);
      t.selection = t.gold_label;
      t.correct = true;
      t.feedback_text = render_feedback(t.selection, t.gold_label, Role::Listener);
      in.trials.push_back(std::move(t));
    }
  }
  return in;
}

// Writes a synthetic batch to disk in corpus layout (trials JSONL + PNG
// images + manifest) so every CLI command can run without the human data.
inline CorpusManifest write_synthetic_corpus(const std::filesystem::path& out_dir,
                                             std::uint64_t seed, SyntheticProfile profile,
                                             int count) {
  if (count < 1) throw ConfigError("synthetic corpus count must be >= 1");
  CorpusManifest manifest;
  std::filesystem::create_directories(out_dir / "images");
  for (int i = 0; i < count; ++i) {
    Interaction in = generate_synthetic(seed + static_cast<std::uint64_t>(i), profile);
    for (const ImageRef& ref : in.context) {
      png::write_file(out_dir / "images" / (ref.id() + ".png"), ref.raster());
    }
    auto trials = out_dir / (in.id + ".jsonl");
    write_interaction_file(in, trials);
    manifest.entries.push_back({in.id, trials, out_dir / "images"});
  }
  manifest.write_file(out_dir / "manifest.json");
  return manifest;
}

// ---------------------------------------------------------------------------
// Importer: adapt an external dataset layout (CSV/TSV/JSONL rows) into the
// normalized corpus via a field-mapping config.
// ---------------------------------------------------------------------------

struct ImportMapping {
  std::string format = "csv";  // csv | tsv | jsonl
  char delimiter = ',';
  std::string input_glob = "*.csv";
  // Required row fields; repetition/correct are optional (recomputed).
  std::string field_interaction;
  std::string field_trial;
  std::string field_repetition;
  std::string field_target;
  std::string field_message;
  std::string field_selection;
  std::string field_correct;
  std::filesystem::path images_dir;       // where source PNGs live
  std::string images_pattern = "{id}.png";

  static ImportMapping load_file(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ConfigError("mapping config is not a JSON object: " + path.string());
    }
    ImportMapping m;
    m.format = j.value("format", std::string("csv"));
    if (m.format == "tsv") m.delimiter = '\t';
    if (j.contains("delimiter")) {
      std::string d = j["delimiter"].get<std::string>();
      if (d.size() != 1) throw ConfigError("delimiter must be a single character");
      m.delimiter = d[0];
    }
    m.input_glob = j.value("input_glob", m.format == "jsonl" ? std::string("*.jsonl")
                                                             : std::string("*." + m.format));
    if (!j.contains("fields") || !j["fields"].is_object()) {
      throw ConfigError("mapping config needs a \"fields\" object: " + path.string());
    }
    const auto& f = j["fields"];
    auto need = [&](const char* key) {
      if (!f.contains(key)) {
        throw ConfigError(std::string("mapping config lacks required field \"") + key + "\"");
      }
      return f[key].get<std::string>();
    };
    m.field_interaction = need("interaction");
    m.field_trial = need("trial");
    m.field_target = need("target");
    m.field_message = need("message");
    m.field_selection = need("selection");
    m.field_repetition = f.value("repetition", std::string());
    m.field_correct = f.value("correct", std::string());
    if (j.contains("images")) {
      const auto& im = j["images"];
      if (im.contains("dir")) {
        std::filesystem::path d = im["dir"].get<std::string>();
        m.images_dir = d.is_absolute() ? d : path.parent_path() / d;
      }
      m.images_pattern = im.value("pattern", std::string("{id}.png"));
    }
    return m;
  }
};

namespace detail {

// Minimal CSV reader: quoted fields, doubled quotes, single-char delimiter.
inline std::vector<std::string> split_delimited(const std::string& line, char delimiter) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == delimiter) {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

struct RawRow {
  std::map<std::string, std::string> values;
  std::string origin;  // file:line for error messages
};

inline std::vector<RawRow> read_rows(const std::filesystem::path& file, const ImportMapping& m) {
  std::vector<RawRow> rows;
  std::string content = read_text_file(file);
  std::vector<std::string> lines = split_lines(content);
  if (m.format == "jsonl") {
    int line_no = 0;
    for (const std::string& line : lines) {
      ++line_no;
      if (trim(line).empty()) continue;
      nlohmann::json o = nlohmann::json::parse(line, nullptr, false);
      if (o.is_discarded() || !o.is_object()) {
        throw ParseError(file.string() + ":" + std::to_string(line_no) + ": not a JSON object");
      }
      RawRow row;
      row.origin = file.string() + ":" + std::to_string(line_no);
      for (auto& [k, v] : o.items()) {
        row.values[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
      rows.push_back(std::move(row));
    }
    return rows;
  }
  if (lines.empty() || trim(lines[0]).empty()) {
    throw ParseError(file.string() + ": missing header row");
  }
  std::vector<std::string> header = split_delimited(lines[0], m.delimiter);
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    std::vector<std::string> fields = split_delimited(lines[ln], m.delimiter);
    if (fields.size() != header.size()) {
      throw ParseError(file.string() + ":" + std::to_string(ln + 1) + ": " +
                       std::to_string(fields.size()) + " fields, header has " +
                       std::to_string(header.size()));
    }
    RawRow row;
    row.origin = file.string() + ":" + std::to_string(ln + 1);
    for (std::size_t k = 0; k < header.size(); ++k) row.values[header[k]] = fields[k];
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string glob_to_regex(std::string_view glob) {
  std::string re = "^";
  for (char c : glob) {
    if (c == '*') {
      re += ".*";
    } else if (c == '?') {
      re += '.';
    } else if (std::isalnum(static_cast<unsigned char>(c))) {
      re += c;
    } else {
      re += '\\';
      re += c;
    }
  }
  re += '$';
  return re;
}

}  // namespace detail

// Groups raw rows by interaction, normalizes each dyad to the standard
// schema, copies images, and writes trials + manifest under out_dir.
// Running it twice over the same inputs produces identical bytes.
inline CorpusManifest import_external(const std::filesystem::path& raw_dir,
                                      const std::filesystem::path& mapping_config,
                                      const std::filesystem::path& out_dir) {
  ImportMapping m = ImportMapping::load_file(mapping_config);

  std::vector<std::filesystem::path> inputs;
  std::regex pattern(detail::glob_to_regex(m.input_glob));
  if (!std::filesystem::is_directory(raw_dir)) {
    throw LoadError("import source is not a directory: " + raw_dir.string());
  }
  for (const auto& entry : std::filesystem::directory_iterator(raw_dir)) {
    if (entry.is_regular_file() &&
        std::regex_match(entry.path().filename().string(), pattern)) {
      inputs.push_back(entry.path());
    }
  }
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) {
    throw LoadError("no input files matching '" + m.input_glob + "' in " + raw_dir.string());
  }

  std::map<std::string, std::vector<detail::RawRow>> by_interaction;
  for (const auto& file : inputs) {
    for (detail::RawRow& row : detail::read_rows(file, m)) {
      auto it = row.values.find(m.field_interaction);
      if (it == row.values.end()) {
        throw ParseError(row.origin + ": missing interaction field '" + m.field_interaction + "'");
      }
      by_interaction[it->second].push_back(std::move(row));
    }
  }

  std::filesystem::create_directories(out_dir / "images");
  CorpusManifest manifest;
  std::set<std::string> copied;
  for (auto& [dyad, rows] : by_interaction) {
    auto field = [&](const detail::RawRow& row, const std::string& name) -> const std::string& {
      auto it = row.values.find(name);
      if (it == row.values.end()) {
        throw ParseError(row.origin + ": missing field '" + name + "' (dyad " + dyad + ")");
      }
      return it->second;
    };

    std::sort(rows.begin(), rows.end(),
              [&](const detail::RawRow& a, const detail::RawRow& b) {
                return std::stoi(field(a, m.field_trial)) < std::stoi(field(b, m.field_trial));
              });
    if (rows.size() != kTrialsPerGame) {
      throw ParseError("dyad " + dyad + " has " + std::to_string(rows.size()) + " trials, expected " +
                       std::to_string(kTrialsPerGame) + " (a repetition is missing or extra)");
    }

    // Canonical context: the four distinct repetition-1 targets, sorted.
    std::set<std::string> context_ids;
    for (int k = 0; k < kContextSize; ++k) {
      context_ids.insert(field(rows[static_cast<std::size_t>(k)], m.field_target));
    }
    if (context_ids.size() != kContextSize) {
      throw ParseError("dyad " + dyad + ": repetition 1 has duplicate targets; cannot derive the context");
    }
    std::vector<std::string> ids(context_ids.begin(), context_ids.end());

    Interaction in;
    in.id = dyad;
    in.source = Source::HumanCorpus;
    for (int k = 0; k < kContextSize; ++k) {
      std::string image_id = ids[static_cast<std::size_t>(k)];
      std::string file_name = image_id + ".png";
      if (!m.images_dir.empty()) {
        std::string src_name = m.images_pattern;
        if (auto at = src_name.find("{id}"); at != std::string::npos) {
          src_name.replace(at, 4, image_id);
        }
        auto src = m.images_dir / src_name;
        if (!std::filesystem::exists(src)) {
          throw LoadError("dyad " + dyad + ": image file missing: " + src.string());
        }
        if (copied.insert(file_name).second) {
          std::filesystem::copy_file(src, out_dir / "images" / file_name,
                                     std::filesystem::copy_options::overwrite_existing);
        }
        in.context[static_cast<std::size_t>(k)] =
            ImageRef::from_file(image_id, out_dir / "images" / file_name);
      } else {
        in.context[static_cast<std::size_t>(k)] = ImageRef::from_id(image_id);
      }
    }

    auto label_of_id = [&](const std::string& image_id) -> std::string {
      for (int k = 0; k < kContextSize; ++k) {
        if (ids[static_cast<std::size_t>(k)] == image_id) {
          return kLabels[static_cast<std::size_t>(k)];
        }
      }
      return {};
    };

    LabelAssignment identity;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const detail::RawRow& row = rows[i];
      TrialRecord t;
      t.trial_index = static_cast<int>(i) + 1;
      int row_trial = std::stoi(field(row, m.field_trial));
      if (!m.field_repetition.empty()) {
        t.repetition = std::stoi(field(row, m.field_repetition));
      } else {
        t.repetition = repetition_of_trial(t.trial_index);
      }
      if (t.repetition != repetition_of_trial(t.trial_index)) {
        throw ParseError(row.origin + ": dyad " + dyad + " trial " + std::to_string(row_trial) +
                         ": repetition " + std::to_string(t.repetition) +
                         " inconsistent with position " + std::to_string(t.trial_index));
      }
      t.target_id = field(row, m.field_target);
      std::string gold = label_of_id(t.target_id);
      if (gold.empty()) {
        throw ParseError(row.origin + ": dyad " + dyad + ": target '" + t.target_id +
                         "' is not one of the repetition-1 targets; ambiguous context");
      }
      t.gold_label = gold;
      t.message = field(row, m.field_message);

      // Selection may arrive as a label or as an image id.
      std::string sel = field(row, m.field_selection);
      std::string normalized = kInvalidSelection;
      for (const auto& l : kLabels) {
        if (sel == l || to_lower(sel) == to_lower(l)) normalized = l;
      }
      if (normalized == kInvalidSelection) {
        std::string by_id = label_of_id(sel);
        if (!by_id.empty()) normalized = by_id;
      }
      t.selection = normalized;
      t.correct = t.selection == t.gold_label;
      if (!m.field_correct.empty()) {
        std::string c = to_lower(trim(field(row, m.field_correct)));
        bool stored = c == "1" || c == "true" || c == "yes";
        if (stored != t.correct) {
          throw ParseError(row.origin + ": dyad " + dyad + ": stored correctness '" + c +
                           "' contradicts selection vs target");
        }
      }
      t.feedback_text = render_feedback(t.selection, t.gold_label, Role::Listener);
      ContextView view = make_view(in.context, identity, t.trial_index == 1);
      t.speaker_view = view;
      t.listener_view = view;
      in.trials.push_back(std::move(t));
    }

    std::vector<Violation> violations = validate_interaction(in);
    if (!violations.empty()) {
      throw ParseError("dyad " + dyad + ": " + violations.front().rule +
                       (violations.size() > 1
                            ? " (+" + std::to_string(violations.size() - 1) + " more)"
                            : ""));
    }

    auto trials_path = out_dir / (dyad + ".jsonl");
    write_interaction_file(in, trials_path);
    manifest.entries.push_back(
        {dyad, trials_path, m.images_dir.empty() ? std::filesystem::path() : out_dir / "images"});
  }

  manifest.write_file(out_dir / "manifest.json");
  return manifest;
}

}  // namespace icca
