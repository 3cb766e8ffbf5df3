#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "icca/promptkit.hpp"
#include "icca/util.hpp"

namespace icca {

inline constexpr int kUnlimitedImages = std::numeric_limits<int>::max();

struct AgentCapability {
  int max_images = kUnlimitedImages;
  bool supports_images = true;
  bool supports_scoring = false;
};

struct DecodeOptions {
  double temperature = 0.0;  // the simulator's default decoding temperature
  int max_words_hint = kMaxMessageWords;
};

struct AgentResponse {
  std::string text;
  std::optional<std::vector<std::pair<std::string, double>>> token_logprobs;
  double latency_ms = 0.0;  // always 0 for scripted agents (reproducibility)
  std::string raw;          // opaque provider payload, empty for scripted
};

struct ScoreResult {
  double logprob = 0.0;
  long tokens = 0;
  bool degenerate = false;  // set for empty continuations
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual const std::string& name() const { return name_; }
  virtual AgentCapability capability() const = 0;
  virtual AgentResponse complete_impl(const Prompt& prompt, const DecodeOptions& decode) = 0;
  virtual ScoreResult score_impl(const Prompt& prefix, const std::string& continuation) {
    (void)prefix;
    (void)continuation;
    throw CapabilityError(name_ + " does not support scoring");
  }
  // Fast-forward past `n` completed calls when resuming a partial run.
  // Stateless agents need nothing; stateful ones must override or refuse.
  virtual void skip_calls(int n) { (void)n; }

 protected:
  explicit Agent(std::string name) : name_(std::move(name)) {}

 private:
  std::string name_;
};

// Entry points that enforce the capability contract before dispatching.
inline AgentResponse complete(Agent& agent, const Prompt& prompt, const DecodeOptions& decode = {}) {
  AgentCapability cap = agent.capability();
  int images = prompt.image_count();
  if (images > 0 && !cap.supports_images) {
    throw CapabilityError(agent.name() + " does not accept images (prompt has " +
                          std::to_string(images) + ")");
  }
  if (images > cap.max_images) {
    throw CapabilityError(agent.name() + " accepts at most " + std::to_string(cap.max_images) +
                          " images; prompt has " + std::to_string(images));
  }
  return agent.complete_impl(prompt, decode);
}

inline ScoreResult score_text(Agent& agent, const Prompt& prefix, const std::string& continuation) {
  AgentCapability cap = agent.capability();
  if (!cap.supports_scoring) throw CapabilityError(agent.name() + " does not support scoring");
  if (prefix.image_count() > cap.max_images) {
    throw CapabilityError(agent.name() + " accepts at most " + std::to_string(cap.max_images) +
                          " images; prefix has " + std::to_string(prefix.image_count()));
  }
  if (trim(continuation).empty()) return {0.0, 0, true};
  return agent.score_impl(prefix, continuation);
}

inline double perplexity(const ScoreResult& score) {
  if (score.tokens <= 0) return 1.0;
  return std::exp(-score.logprob / static_cast<double>(score.tokens));
}

// ---------------------------------------------------------------------------
// Reply parsing.
// ---------------------------------------------------------------------------

namespace detail {

struct TokenSpan {
  std::string text;
  std::size_t pos = 0;
};

inline std::vector<TokenSpan> word_tokens(std::string_view text) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isalnum(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < text.size() && std::isalnum(static_cast<unsigned char>(text[i]))) ++i;
    out.push_back({std::string(text.substr(start, i - start)), start});
  }
  return out;
}

}  // namespace detail

// Extracts the chosen label from a listener reply. "Image {L}" matches are
// case-insensitive; a bare label token must match case exactly (the article
// "a" must not read as label A). Two distinct labels inside the first
// sentence make the reply ambiguous.
inline std::string parse_listener_choice(const std::string& text,
                                         std::span<const std::string> valid_labels) {
  if (valid_labels.empty()) throw ContractError("parse_listener_choice: no valid labels");
  auto tokens = detail::word_tokens(text);

  auto label_ci = [&](const std::string& tok) -> const std::string* {
    std::string lower = to_lower(tok);
    for (const auto& l : valid_labels) {
      if (to_lower(l) == lower) return &l;
    }
    return nullptr;
  };
  auto label_exact = [&](const std::string& tok) -> const std::string* {
    for (const auto& l : valid_labels) {
      if (l == tok) return &l;
    }
    return nullptr;
  };

  struct Match {
    std::size_t pos;
    const std::string* label;
  };
  std::vector<Match> matches;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (to_lower(tokens[i].text) == "image" && i + 1 < tokens.size()) {
      if (const std::string* l = label_ci(tokens[i + 1].text)) {
        matches.push_back({tokens[i].pos, l});
        continue;
      }
    }
    bool after_image = i > 0 && to_lower(tokens[i - 1].text) == "image";
    if (!after_image) {
      if (const std::string* l = label_exact(tokens[i].text)) {
        matches.push_back({tokens[i].pos, l});
      }
    }
  }
  if (matches.empty()) return kInvalidSelection;

  std::size_t sentence_end = text.find_first_of(".!?");
  if (sentence_end == std::string::npos) sentence_end = text.size();
  std::set<std::string> first_sentence_labels;
  for (const Match& m : matches) {
    if (m.pos < sentence_end) first_sentence_labels.insert(*m.label);
  }
  if (first_sentence_labels.size() > 1) return kInvalidSelection;
  return *matches.front().label;
}

struct ParsedMessage {
  std::string message;
  bool length_violation = false;  // not shorter than the word hint; recorded, not enforced
  bool empty = false;
};

inline ParsedMessage parse_speaker_message(const std::string& text,
                                           int max_words_hint = kMaxMessageWords) {
  std::string_view s = trim(text);
  for (std::string_view prefix : {std::string_view("[Speaker]"), std::string_view("[speaker]")}) {
    if (s.substr(0, prefix.size()) == prefix) s = trim(s.substr(prefix.size()));
  }
  std::string lowered = to_lower(s.substr(0, 8));
  if (lowered == "message:") s = trim(s.substr(8));
  while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                           (s.front() == '\'' && s.back() == '\''))) {
    s = trim(s.substr(1, s.size() - 2));
  }
  ParsedMessage out;
  out.message = std::string(s);
  out.empty = out.message.empty();
  out.length_violation =
      static_cast<int>(split_whitespace(out.message).size()) >= max_words_hint;
  return out;
}

// ---------------------------------------------------------------------------
// Scripted agents.
// ---------------------------------------------------------------------------

struct PlaybookEntry {
  std::string text;
  std::optional<std::vector<std::pair<std::string, double>>> token_logprobs;
};

// Replays canned responses in order; one entry per expected call.
class PlaybookAgent : public Agent {
 public:
  PlaybookAgent(std::string name, std::vector<PlaybookEntry> entries,
                AgentCapability cap = {})
      : Agent(std::move(name)), entries_(std::move(entries)), cap_(cap) {}

  static std::unique_ptr<PlaybookAgent> load_file(const std::filesystem::path& path,
                                                  AgentCapability cap = {}) {
    std::vector<PlaybookEntry> entries;
    std::string content = read_text_file(path);
    int line_no = 0;
    for (const std::string& line : split_lines(content)) {
      ++line_no;
      if (trim(line).empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("text")) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": playbook line must be an object with a \"text\" field");
      }
      PlaybookEntry e;
      e.text = j["text"].get<std::string>();
      if (j.contains("token_logprobs")) {
        std::vector<std::pair<std::string, double>> lps;
        for (const auto& pair : j["token_logprobs"]) {
          lps.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<double>());
        }
        e.token_logprobs = std::move(lps);
      }
      entries.push_back(std::move(e));
    }
    bool any_scores = false;
    for (const auto& e : entries) any_scores = any_scores || e.token_logprobs.has_value();
    cap.supports_scoring = cap.supports_scoring || any_scores;
    return std::make_unique<PlaybookAgent>("playbook:" + path.filename().string(),
                                           std::move(entries), cap);
  }

  AgentCapability capability() const override { return cap_; }

  AgentResponse complete_impl(const Prompt&, const DecodeOptions&) override {
    const PlaybookEntry& e = next();
    AgentResponse r;
    r.text = e.text;
    r.token_logprobs = e.token_logprobs;
    return r;
  }

  ScoreResult score_impl(const Prompt&, const std::string&) override {
    const PlaybookEntry& e = next();
    if (!e.token_logprobs) {
      throw AgentError(name() + ": playbook entry " + std::to_string(cursor_) +
                       " has no token_logprobs for scoring");
    }
    ScoreResult r;
    for (const auto& [tok, lp] : *e.token_logprobs) {
      (void)tok;
      r.logprob += lp;
      ++r.tokens;
    }
    return r;
  }

  void skip_calls(int n) override {
    cursor_ += static_cast<std::size_t>(n);
    if (cursor_ > entries_.size()) {
      throw ContractError(name() + ": cannot skip past the end of the playbook");
    }
  }

  std::size_t remaining() const { return entries_.size() - cursor_; }

 private:
  const PlaybookEntry& next() {
    if (cursor_ >= entries_.size()) {
      throw AgentError(name() + ": playbook exhausted after " + std::to_string(entries_.size()) +
                       " replies");
    }
    return entries_[cursor_++];
  }

  std::vector<PlaybookEntry> entries_;
  AgentCapability cap_;
  std::size_t cursor_ = 0;
};

// Side channel for test listeners that need ground truth the prompt
// deliberately withholds. The engine announces each trial before asking the
// listener to complete.
struct TrialInfo {
  int trial_index = 0;
  std::string gold_label;
};

class TrialAware {
 public:
  virtual ~TrialAware() = default;
  virtual void on_trial(const TrialInfo& info) = 0;
};

// Always answers the gold label; an upper-bound listener.
class PerfectListenerAgent : public Agent, public TrialAware {
 public:
  PerfectListenerAgent() : Agent("scripted:perfect") {}

  AgentCapability capability() const override { return {}; }

  void on_trial(const TrialInfo& info) override { gold_ = info.gold_label; }

  AgentResponse complete_impl(const Prompt&, const DecodeOptions&) override {
    if (gold_.empty()) throw ContractError("perfect listener: no trial announced");
    AgentResponse r;
    r.text = "Image " + gold_;
    return r;
  }

 private:
  std::string gold_;
};

// Answers from memory of past feedback: parses the prompt text, maps every
// message whose gold label was revealed by feedback, and echoes that label
// when the same message reappears. Unseen messages fall back to a playbook
// (or "Image A" without one).
class MemorizerAgent : public Agent {
 public:
  explicit MemorizerAgent(std::unique_ptr<PlaybookAgent> fallback = nullptr)
      : Agent("scripted:memorizer"), fallback_(std::move(fallback)) {}

  AgentCapability capability() const override { return {}; }

  AgentResponse complete_impl(const Prompt& prompt, const DecodeOptions& decode) override {
    std::string flat = prompt.flat_text();
    std::vector<std::string> lines = split_lines(flat);
    static constexpr std::string_view kQuestion = "Which image is this message referring to: ";
    static constexpr std::string_view kReveal = "I was referring to Image ";

    std::map<std::string, std::string> gold_by_message;
    std::string pending;  // message awaiting its feedback line
    std::string current;  // the unanswered question
    for (const std::string& line : lines) {
      std::size_t q = line.find(kQuestion);
      if (q != std::string::npos) {
        current = line.substr(q + kQuestion.size());
        pending = current;
        continue;
      }
      std::size_t r = line.find(kReveal);
      if (r != std::string::npos && !pending.empty()) {
        std::size_t label_at = r + kReveal.size();
        if (label_at < line.size()) {
          gold_by_message[pending] = line.substr(label_at, 1);
        }
        pending.clear();
      }
    }
    if (current.empty()) {
      throw AgentError("memorizer: prompt has no open question to answer");
    }
    auto it = gold_by_message.find(current);
    if (it != gold_by_message.end()) {
      AgentResponse r;
      r.text = "Image " + it->second;
      return r;
    }
    if (fallback_ != nullptr) return fallback_->complete_impl(prompt, decode);
    AgentResponse r;
    r.text = "Image A";
    return r;
  }

  void skip_calls(int n) override {
    if (n > 0 && fallback_ != nullptr) {
      // Fallback consumption depends on which messages were unseen, which a
      // bare call count cannot reconstruct.
      throw ContractError("memorizer with fallback playbook cannot fast-forward");
    }
  }

 private:
  std::unique_ptr<PlaybookAgent> fallback_;
};

// Picks the displayed image whose pixels match a palette color word in the
// message. Sees exactly what the prompt shows, so misleading displays fool
// it by construction.
class ContentMatcherAgent : public Agent {
 public:
  ContentMatcherAgent() : Agent("scripted:matcher") {}

  AgentCapability capability() const override { return {}; }

  AgentResponse complete_impl(const Prompt& prompt, const DecodeOptions&) override {
    // Label -> image bindings from the most recent displayed context.
    std::map<std::string, const ImageRef*> bound;
    std::string preceding_text;
    for (const PromptSegment& seg : prompt.segments) {
      if (seg.kind == PromptSegment::Kind::Text) {
        preceding_text = seg.text;
        continue;
      }
      // The text right before a context image ends "... Image X: ".
      std::string_view t = preceding_text;
      if (t.size() >= 9 && t.substr(t.size() - 2) == ": " &&
          t.substr(t.size() - 9, 6) == "Image ") {
        std::string label(t.substr(t.size() - 3, 1));
        if (label == "A") bound.clear();  // a fresh context block starts
        bound[label] = &seg.image;
      }
      preceding_text.clear();
    }

    std::string flat = prompt.flat_text();
    static constexpr std::string_view kQuestion = "Which image is this message referring to: ";
    std::size_t q = flat.rfind(kQuestion);
    if (q == std::string::npos) throw AgentError("matcher: no question in prompt");
    std::string message = flat.substr(q + kQuestion.size());
    if (std::size_t nl = message.find('\n'); nl != std::string::npos) message.resize(nl);

    const NamedColor* want = nullptr;
    for (const std::string& tok : split_whitespace(to_lower(message))) {
      std::string clean;
      for (char c : tok) {
        if (!std::ispunct(static_cast<unsigned char>(c))) clean.push_back(c);
      }
      if (const NamedColor* c = find_color(clean)) {
        want = c;
        break;
      }
    }
    AgentResponse r;
    if (want != nullptr) {
      for (const auto& [label, ref] : bound) {
        const Raster& px = ref->raster();
        if (px.is_uniform() && px.rgb.size() >= 3 && px.rgb[0] == want->r &&
            px.rgb[1] == want->g && px.rgb[2] == want->b) {
          r.text = "Image " + label;
          return r;
        }
      }
    }
    r.text = "Image A";  // no visual match; guess
    return r;
  }
};

// Scoring agent that prefers text it has already seen: every continuation
// token costs -1.0, discounted to -0.9 when the continuation appears
// verbatim in the prefix text.
class RepeatBiasedScorerAgent : public Agent {
 public:
  RepeatBiasedScorerAgent() : Agent("scripted:repeat-scorer") {}
  AgentCapability capability() const override {
    AgentCapability c;
    c.supports_scoring = true;
    return c;
  }
  AgentResponse complete_impl(const Prompt&, const DecodeOptions&) override {
    throw CapabilityError(name() + " is score-only");
  }
  ScoreResult score_impl(const Prompt& prefix, const std::string& continuation) override {
    long tokens = static_cast<long>(split_whitespace(continuation).size());
    bool seen = prefix.flat_text().find(continuation) != std::string::npos;
    double per_token = seen ? -0.9 : -1.0;
    return {per_token * static_cast<double>(tokens), tokens, false};
  }
};

// Input-independent scorer: every call costs the same, so paired transcripts
// always tie.
class ConstantScorerAgent : public Agent {
 public:
  ConstantScorerAgent() : Agent("scripted:tie-scorer") {}
  AgentCapability capability() const override {
    AgentCapability c;
    c.supports_scoring = true;
    return c;
  }
  AgentResponse complete_impl(const Prompt&, const DecodeOptions&) override {
    throw CapabilityError(name() + " is score-only");
  }
  ScoreResult score_impl(const Prompt&, const std::string&) override {
    return {-1.0, 1, false};
  }
};

// Flat -1.0 per whitespace token.
class UniformScorerAgent : public Agent {
 public:
  UniformScorerAgent() : Agent("scripted:uniform-scorer") {}
  AgentCapability capability() const override {
    AgentCapability c;
    c.supports_scoring = true;
    return c;
  }
  AgentResponse complete_impl(const Prompt&, const DecodeOptions&) override {
    throw CapabilityError(name() + " is score-only");
  }
  ScoreResult score_impl(const Prompt&, const std::string& continuation) override {
    long tokens = static_cast<long>(split_whitespace(continuation).size());
    return {-1.0 * static_cast<double>(tokens), tokens, false};
  }
};

// ---------------------------------------------------------------------------
// HTTP adapter: a neutral chat-completions-style wire shape with interleaved
// text and base64 PNG image parts. Secrets come only from the environment
// variable named in the config; they never touch disk or transcripts.
// ---------------------------------------------------------------------------

struct AdapterConfig {
  std::string name;
  std::string endpoint;  // http(s)://host[:port]/path
  std::string auth_env;  // environment variable holding the bearer token
  int max_images = kUnlimitedImages;
  bool supports_images = true;
  bool supports_scoring = false;
  int max_attempts = 3;
  int backoff_ms = 100;             // doubles per retry
  int min_request_interval_ms = 0;  // adapter-level rate limit
  int timeout_s = 120;

  static AdapterConfig load_file(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ConfigError("adapter config is not a JSON object: " + path.string());
    }
    AdapterConfig c;
    if (!j.contains("name") || !j.contains("endpoint")) {
      throw ConfigError("adapter config needs \"name\" and \"endpoint\": " + path.string());
    }
    c.name = j["name"].get<std::string>();
    c.endpoint = j["endpoint"].get<std::string>();
    c.auth_env = j.value("auth_env", std::string());
    if (j.contains("max_images")) c.max_images = j["max_images"].get<int>();
    c.supports_images = j.value("supports_images", true);
    c.supports_scoring = j.value("supports_scoring", false);
    c.max_attempts = j.value("max_attempts", 3);
    c.backoff_ms = j.value("backoff_ms", 100);
    c.min_request_interval_ms = j.value("min_request_interval_ms", 0);
    c.timeout_s = j.value("timeout_s", 120);
    if (c.max_images < 1) throw ConfigError("adapter max_images must be >= 1");
    if (c.max_attempts < 1) throw ConfigError("adapter max_attempts must be >= 1");
    return c;
  }
};

class HttpAdapterAgent : public Agent {
 public:
  explicit HttpAdapterAgent(AdapterConfig config)
      : Agent("adapter:" + config.name), config_(std::move(config)) {
    parse_endpoint();
  }

  AgentCapability capability() const override {
    return {config_.max_images, config_.supports_images, config_.supports_scoring};
  }

  AgentResponse complete_impl(const Prompt& prompt, const DecodeOptions& decode) override {
    nlohmann::json body;
    body["temperature"] = decode.temperature;
    body["max_words_hint"] = decode.max_words_hint;
    body["parts"] = encode_parts(prompt);
    auto started = std::chrono::steady_clock::now();
    nlohmann::json reply = post(body);
    auto elapsed = std::chrono::steady_clock::now() - started;
    if (!reply.contains("text")) {
      throw AgentError(name() + ": response lacks \"text\" field");
    }
    AgentResponse r;
    r.text = reply["text"].get<std::string>();
    if (reply.contains("token_logprobs")) {
      std::vector<std::pair<std::string, double>> lps;
      for (const auto& pair : reply["token_logprobs"]) {
        lps.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<double>());
      }
      r.token_logprobs = std::move(lps);
    }
    r.latency_ms = std::chrono::duration<double, std::milli>(elapsed).count();
    r.raw = reply.dump();
    return r;
  }

  ScoreResult score_impl(const Prompt& prefix, const std::string& continuation) override {
    nlohmann::json body;
    body["mode"] = "score";
    body["continuation"] = continuation;
    body["parts"] = encode_parts(prefix);
    nlohmann::json reply = post(body);
    if (!reply.contains("logprob") || !reply.contains("tokens")) {
      throw AgentError(name() + ": score response lacks \"logprob\"/\"tokens\"");
    }
    return {reply["logprob"].get<double>(), reply["tokens"].get<long>(), false};
  }

 private:
  nlohmann::json encode_parts(const Prompt& prompt) const {
    nlohmann::json parts = nlohmann::json::array();
    for (const PromptSegment& seg : prompt.segments) {
      if (seg.kind == PromptSegment::Kind::Text) {
        parts.push_back({{"type", "text"}, {"text", seg.text}});
      } else {
        auto bytes = png::encode(seg.image.raster());
        parts.push_back({{"type", "image"}, {"png_base64", base64_encode(bytes)}});
      }
    }
    return parts;
  }

  void parse_endpoint() {
    std::string_view e = config_.endpoint;
    if (e.substr(0, 7) == "http://") {
      e.remove_prefix(7);
    } else if (e.substr(0, 8) == "https://") {
      throw ConfigError(name() + ": https endpoints need TLS support not built in; use a local proxy");
    } else {
      throw ConfigError(name() + ": endpoint must start with http://");
    }
    std::size_t slash = e.find('/');
    std::string hostport(slash == std::string_view::npos ? e : e.substr(0, slash));
    path_ = slash == std::string_view::npos ? "/" : std::string(e.substr(slash));
    std::size_t colon = hostport.find(':');
    if (colon == std::string::npos) {
      host_ = hostport;
      port_ = 80;
    } else {
      host_ = hostport.substr(0, colon);
      port_ = std::stoi(hostport.substr(colon + 1));
    }
    if (host_.empty()) throw ConfigError(name() + ": endpoint has no host");
  }

  void rate_limit() {
    if (config_.min_request_interval_ms <= 0) return;
    std::unique_lock<std::mutex> lock(mutex_);
    auto now = std::chrono::steady_clock::now();
    auto interval = std::chrono::milliseconds(config_.min_request_interval_ms);
    if (last_request_.time_since_epoch().count() != 0 && now - last_request_ < interval) {
      auto wait = interval - (now - last_request_);
      lock.unlock();
      std::this_thread::sleep_for(wait);
      lock.lock();
    }
    last_request_ = std::chrono::steady_clock::now();
  }

  nlohmann::json post(const nlohmann::json& body) {
    std::string payload = body.dump();
    httplib::Headers headers;
    if (!config_.auth_env.empty()) {
      const char* token = std::getenv(config_.auth_env.c_str());
      if (token != nullptr && token[0] != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + token);
      }
    }
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
      rate_limit();
      httplib::Client client(host_, port_);
      client.set_connection_timeout(config_.timeout_s, 0);
      client.set_read_timeout(config_.timeout_s, 0);
      httplib::Result res = client.Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
      } else if (res->status >= 500) {
        last_error = "server error " + std::to_string(res->status);
      } else if (res->status != 200) {
        throw AgentError(name() + ": request rejected with status " +
                         std::to_string(res->status) + ": " + res->body.substr(0, 200));
      } else {
        nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
        if (reply.is_discarded()) {
          throw AgentError(name() + ": response is not valid JSON");
        }
        return reply;
      }
      if (attempt < config_.max_attempts) {
        std::this_thread::sleep_for(
            std::chrono::milliseconds(config_.backoff_ms * (1 << (attempt - 1))));
      }
    }
    throw AgentError(name() + ": " + last_error + " after " +
                     std::to_string(config_.max_attempts) + " attempts");
  }

  AdapterConfig config_;
  std::string host_;
  std::string path_;
  int port_ = 80;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point last_request_;
};

// ---------------------------------------------------------------------------
// Agent specs. "replay" is not constructible here: the engine implements the
// replay speaker directly from the interaction record.
// ---------------------------------------------------------------------------

inline bool is_replay_spec(std::string_view spec) { return spec == "replay"; }

inline std::unique_ptr<Agent> make_agent(const std::string& spec) {
  auto split2 = [](std::string_view s) {
    std::size_t colon = s.find(':');
    return std::pair<std::string_view, std::string_view>(
        s.substr(0, colon), colon == std::string_view::npos ? std::string_view{}
                                                            : s.substr(colon + 1));
  };
  auto [scheme, rest] = split2(spec);
  if (scheme == "scripted") {
    auto [kind, arg] = split2(rest);
    if (kind == "perfect") return std::make_unique<PerfectListenerAgent>();
    if (kind == "matcher") return std::make_unique<ContentMatcherAgent>();
    if (kind == "memorizer") {
      std::unique_ptr<PlaybookAgent> fallback;
      if (!arg.empty()) fallback = PlaybookAgent::load_file(std::filesystem::path(arg));
      return std::make_unique<MemorizerAgent>(std::move(fallback));
    }
    if (kind == "playbook") {
      if (arg.empty()) throw ConfigError("scripted:playbook needs a file path");
      return PlaybookAgent::load_file(std::filesystem::path(arg));
    }
    if (kind == "repeat-scorer") return std::make_unique<RepeatBiasedScorerAgent>();
    if (kind == "tie-scorer") return std::make_unique<ConstantScorerAgent>();
    if (kind == "uniform-scorer") return std::make_unique<UniformScorerAgent>();
    throw ConfigError("unknown scripted agent: " + std::string(rest));
  }
  if (scheme == "adapter") {
    if (rest.empty()) throw ConfigError("adapter spec needs a config file path");
    return std::make_unique<HttpAdapterAgent>(
        AdapterConfig::load_file(std::filesystem::path(rest)));
  }
  throw ConfigError("unknown agent spec '" + spec +
                    "' (expected replay, scripted:<kind>[:<path>], or adapter:<config.json>)");
}

}  // namespace icca
