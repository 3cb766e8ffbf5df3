#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "icca/agents.hpp"
#include "testutil.hpp"

using namespace icca;

namespace {

std::string choose(const std::string& reply) {
  return parse_listener_choice(reply, std::span(kLabels.data(), kLabels.size()));
}

Prompt text_prompt(std::string text) {
  Prompt p;
  p.segments.push_back(PromptSegment::make_text(std::move(text)));
  return p;
}

Prompt prompt_with_images(int n) {
  Prompt p = text_prompt("question");
  for (int i = 0; i < n; ++i) {
    p.segments.push_back(PromptSegment::make_image(
        ImageRef::from_raster("i" + std::to_string(i), Raster::solid(1, 1, 1, 2, 3))));
  }
  return p;
}

}  // namespace

TEST_CASE("listener replies: the Image-prefixed form wins, any case") {
  CHECK(choose("Image B") == "B");
  CHECK(choose("image b") == "B");
  CHECK(choose("IMAGE d, definitely") == "D");
  CHECK(choose("I think it's Image C.") == "C");
  CHECK(choose("The image B shows a red square.") == "B");
}

TEST_CASE("listener replies: bare labels must match case exactly") {
  CHECK(choose("B") == "B");
  CHECK(choose("b") == kInvalidSelection);
  // The article never reads as a choice of Image A.
  CHECK(choose("a red circle on top") == kInvalidSelection);
  CHECK(choose("A") == "A");
}

TEST_CASE("listener replies: ambiguity and absence are invalid") {
  CHECK(choose("A or B") == kInvalidSelection);                 // two labels, no sentence break
  CHECK(choose("Image A or Image B.") == kInvalidSelection);
  CHECK(choose("Image A. Or maybe B?") == "A");                 // second sentence does not count
  CHECK(choose("Image A... Image A!") == "A");                  // repeats of one label agree
  CHECK(choose("no idea") == kInvalidSelection);
  CHECK(choose("Image E") == kInvalidSelection);                // not a valid label
  CHECK(choose("") == kInvalidSelection);
  CHECK_THROWS_AS(parse_listener_choice("Image A", {}), ContractError);
}

TEST_CASE("speaker replies: frame prefixes and quotes are stripped") {
  CHECK(parse_speaker_message("red circle").message == "red circle");
  CHECK(parse_speaker_message("[Speaker] Message: red circle").message == "red circle");
  CHECK(parse_speaker_message("Message: red circle").message == "red circle");
  CHECK(parse_speaker_message("MESSAGE: red circle").message == "red circle");
  CHECK(parse_speaker_message("\"red circle\"").message == "red circle");
  CHECK(parse_speaker_message("'\"nested\"'").message == "nested");
  CHECK(parse_speaker_message("  padded  ").message == "padded");
}

TEST_CASE("speaker replies: emptiness and length are recorded, not enforced") {
  ParsedMessage empty = parse_speaker_message("   ");
  CHECK(empty.empty);
  CHECK(empty.message.empty());

  std::string nineteen, twenty;
  for (int i = 0; i < 19; ++i) nineteen += (i ? " w" : "w");
  for (int i = 0; i < 20; ++i) twenty += (i ? " w" : "w");
  CHECK_FALSE(parse_speaker_message(nineteen).length_violation);
  CHECK(parse_speaker_message(twenty).length_violation);
  CHECK(parse_speaker_message(twenty).message == twenty);  // kept verbatim
}

TEST_CASE("capability gate: image limits and scoring support") {
  AgentCapability text_only;
  text_only.supports_images = false;
  PlaybookAgent agent("p", {{{"hi"}, std::nullopt}}, text_only);
  CHECK_THROWS_AS(complete(agent, prompt_with_images(1)), CapabilityError);
  CHECK(complete(agent, text_prompt("q")).text == "hi");

  AgentCapability capped;
  capped.max_images = 2;
  PlaybookAgent limited("p", {{{"hi"}, std::nullopt}}, capped);
  CHECK_THROWS_AS(complete(limited, prompt_with_images(3)), CapabilityError);

  PlaybookAgent no_scores("p", {{{"hi"}, std::nullopt}});
  CHECK_THROWS_AS(score_text(no_scores, text_prompt("q"), "x"), CapabilityError);
}

TEST_CASE("scoring entry point: blank continuations are degenerate") {
  UniformScorerAgent scorer;
  ScoreResult r = score_text(scorer, text_prompt("q"), "   ");
  CHECK(r.degenerate);
  CHECK(r.tokens == 0);
  CHECK(perplexity(r) == 1.0);

  r = score_text(scorer, text_prompt("q"), "two words");
  CHECK(r.logprob == -2.0);
  CHECK(r.tokens == 2);
  CHECK(perplexity(r) == Catch::Approx(std::exp(1.0)));
}

TEST_CASE("playbook: replies in order, exhaustion fails loudly") {
  PlaybookAgent agent("p", {{{"one"}, std::nullopt}, {{"two"}, std::nullopt}});
  CHECK(agent.remaining() == 2);
  CHECK(complete(agent, text_prompt("q")).text == "one");
  CHECK(complete(agent, text_prompt("q")).text == "two");
  CHECK(agent.remaining() == 0);
  CHECK_THROWS_AS(complete(agent, text_prompt("q")), AgentError);
}

TEST_CASE("playbook: fast-forward for resume, never past the end") {
  PlaybookAgent agent("p", {{{"one"}, std::nullopt}, {{"two"}, std::nullopt}});
  agent.skip_calls(1);
  CHECK(complete(agent, text_prompt("q")).text == "two");
  PlaybookAgent other("p", {{{"one"}, std::nullopt}});
  CHECK_THROWS_AS(other.skip_calls(2), ContractError);
}

TEST_CASE("playbook files: JSONL with optional token logprobs") {
  testutil::TempDir tmp("playbook");
  write_text_file(tmp.path() / "good.jsonl",
                  "{\"text\": \"Image A\"}\n"
                  "\n"
                  "{\"text\": \"red dot\", \"token_logprobs\": [[\"red\", -0.5], [\" dot\", -1.5]]}\n");
  auto agent = PlaybookAgent::load_file(tmp.path() / "good.jsonl");
  CHECK(agent->capability().supports_scoring);  // inferred from the logprobs
  CHECK(complete(*agent, text_prompt("q")).text == "Image A");
  ScoreResult score = score_text(*agent, text_prompt("q"), "red dot");
  CHECK(score.logprob == -2.0);
  CHECK(score.tokens == 2);

  write_text_file(tmp.path() / "bad.jsonl", "{\"text\": \"ok\"}\nnot json\n");
  CHECK_THROWS_WITH(PlaybookAgent::load_file(tmp.path() / "bad.jsonl"),
                    Catch::Matchers::ContainsSubstring(":2"));

  // Scoring against an entry without logprobs is an agent error.
  write_text_file(tmp.path() / "nolp.jsonl", "{\"text\": \"plain\"}\n");
  AgentCapability scoring;
  scoring.supports_scoring = true;
  auto nolp = PlaybookAgent::load_file(tmp.path() / "nolp.jsonl", scoring);
  CHECK_THROWS_AS(score_text(*nolp, text_prompt("q"), "x"), AgentError);
}

TEST_CASE("perfect listener answers the announced gold label") {
  PerfectListenerAgent agent;
  CHECK_THROWS_AS(complete(agent, text_prompt("q")), ContractError);
  agent.on_trial({1, "C"});
  CHECK(complete(agent, text_prompt("q")).text == "Image C");
  agent.on_trial({2, "A"});
  CHECK(complete(agent, text_prompt("q")).text == "Image A");
}

TEST_CASE("memorizer learns labels from feedback lines") {
  MemorizerAgent agent;
  std::string history =
      "Trial 1\n"
      "Which image is this message referring to: blue thing\n"
      "[Listener] Image A\n"
      "[System] Wrong. I was referring to Image C.\n"
      "\n"
      "Trial 2\n"
      "Which image is this message referring to: blue thing\n"
      "[Listener] Image";
  CHECK(complete(agent, text_prompt(history)).text == "Image C");

  // Unseen message, no fallback: the default guess.
  std::string fresh =
      "Trial 1\n"
      "Which image is this message referring to: never seen\n"
      "[Listener] Image";
  CHECK(complete(agent, text_prompt(fresh)).text == "Image A");

  CHECK_THROWS_AS(complete(agent, text_prompt("no question here")), AgentError);
  CHECK_NOTHROW(agent.skip_calls(5));  // stateless without a fallback
}

TEST_CASE("memorizer falls back to a playbook for unseen messages") {
  testutil::TempDir tmp("memorizer");
  write_text_file(tmp.path() / "guesses.jsonl", "{\"text\": \"Image D\"}\n");
  auto agent = make_agent("scripted:memorizer:" + (tmp.path() / "guesses.jsonl").string());
  std::string fresh =
      "Trial 1\n"
      "Which image is this message referring to: never seen\n"
      "[Listener] Image";
  CHECK(complete(*agent, text_prompt(fresh)).text == "Image D");
  // Which playbook entries were consumed depends on message history, so a
  // bare call count cannot fast-forward this agent.
  CHECK_THROWS_AS(agent->skip_calls(3), ContractError);
}

TEST_CASE("content matcher picks the displayed image naming the color") {
  const NamedColor* red = find_color("red");
  const NamedColor* blue = find_color("blue");
  REQUIRE(red != nullptr);
  REQUIRE(blue != nullptr);
  auto img = [](const NamedColor* c, const std::string& id) {
    return ImageRef::from_raster(id, Raster::solid(2, 2, c->r, c->g, c->b));
  };

  Prompt p = text_prompt("[System] intro\n\n");
  p.segments.push_back(PromptSegment::make_text("Image A: "));
  p.segments.push_back(PromptSegment::make_image(img(red, "r")));
  p.segments.push_back(PromptSegment::make_text("\nImage B: "));
  p.segments.push_back(PromptSegment::make_image(img(blue, "b")));
  p.segments.push_back(PromptSegment::make_text(
      "\nWhich image is this message referring to: the blue one\n[Listener] Image"));

  ContentMatcherAgent agent;
  CHECK(complete(agent, p).text == "Image B");

  // A later context block rebinds the labels: red now sits at B.
  Prompt rebound = p;
  rebound.segments.pop_back();
  rebound.segments.push_back(PromptSegment::make_text("\nImage A: "));
  rebound.segments.push_back(PromptSegment::make_image(img(blue, "b")));
  rebound.segments.push_back(PromptSegment::make_text("\nImage B: "));
  rebound.segments.push_back(PromptSegment::make_image(img(red, "r")));
  rebound.segments.push_back(PromptSegment::make_text(
      "\nWhich image is this message referring to: the red one\n[Listener] Image"));
  CHECK(complete(agent, rebound).text == "Image B");

  // No color word: it guesses A.
  Prompt vague = p;
  vague.segments.pop_back();
  vague.segments.push_back(PromptSegment::make_text(
      "\nWhich image is this message referring to: the nice one\n[Listener] Image"));
  CHECK(complete(agent, vague).text == "Image A");
}

TEST_CASE("scorer fixtures: repetition bias, ties, uniform cost") {
  RepeatBiasedScorerAgent biased;
  ScoreResult seen = score_text(biased, text_prompt("red circle appeared before"), "red circle");
  ScoreResult unseen = score_text(biased, text_prompt("nothing relevant"), "red circle");
  CHECK(seen.logprob == Catch::Approx(-1.8));
  CHECK(unseen.logprob == Catch::Approx(-2.0));
  CHECK(seen.logprob > unseen.logprob);
  CHECK_THROWS_AS(complete(biased, text_prompt("q")), CapabilityError);

  ConstantScorerAgent tie;
  CHECK(score_text(tie, text_prompt("a"), "x").logprob ==
        score_text(tie, text_prompt("b"), "y z").logprob);
}

TEST_CASE("agent specs map to implementations") {
  CHECK(make_agent("scripted:perfect")->name() == "scripted:perfect");
  CHECK(make_agent("scripted:matcher")->name() == "scripted:matcher");
  CHECK(make_agent("scripted:memorizer")->name() == "scripted:memorizer");
  CHECK(make_agent("scripted:repeat-scorer")->capability().supports_scoring);
  CHECK(make_agent("scripted:tie-scorer")->capability().supports_scoring);
  CHECK(make_agent("scripted:uniform-scorer")->capability().supports_scoring);
  CHECK(is_replay_spec("replay"));
  CHECK_FALSE(is_replay_spec("scripted:perfect"));
  CHECK_THROWS_AS(make_agent("replay"), ConfigError);  // engine-level, not an agent
  CHECK_THROWS_AS(make_agent("scripted:unknown"), ConfigError);
  CHECK_THROWS_AS(make_agent("scripted:playbook"), ConfigError);
  CHECK_THROWS_AS(make_agent("adapter:"), ConfigError);
  CHECK_THROWS_AS(make_agent("telepathy:direct"), ConfigError);
}

TEST_CASE("adapter config files validate required fields") {
  testutil::TempDir tmp("adapter");
  write_text_file(tmp.path() / "good.json",
                  "{\"name\": \"local\", \"endpoint\": \"http://127.0.0.1:9/v1\","
                  " \"auth_env\": \"ICCA_TEST_TOKEN\", \"max_images\": 16,"
                  " \"supports_scoring\": true, \"max_attempts\": 2, \"backoff_ms\": 1}");
  AdapterConfig c = AdapterConfig::load_file(tmp.path() / "good.json");
  CHECK(c.name == "local");
  CHECK(c.max_images == 16);
  CHECK(c.supports_scoring);
  CHECK(c.max_attempts == 2);

  write_text_file(tmp.path() / "noend.json", "{\"name\": \"x\"}");
  CHECK_THROWS_AS(AdapterConfig::load_file(tmp.path() / "noend.json"), ConfigError);
  write_text_file(tmp.path() / "notobj.json", "[1,2]");
  CHECK_THROWS_AS(AdapterConfig::load_file(tmp.path() / "notobj.json"), ConfigError);
  write_text_file(tmp.path() / "badcap.json",
                  "{\"name\": \"x\", \"endpoint\": \"http://h/p\", \"max_images\": 0}");
  CHECK_THROWS_AS(AdapterConfig::load_file(tmp.path() / "badcap.json"), ConfigError);
}

TEST_CASE("adapter endpoints must be plain http") {
  AdapterConfig c;
  c.name = "x";
  c.endpoint = "https://api.example.com/v1";
  CHECK_THROWS_AS(HttpAdapterAgent(c), ConfigError);
  c.endpoint = "ftp://files";
  CHECK_THROWS_AS(HttpAdapterAgent(c), ConfigError);
  c.endpoint = "http:///nohost";
  CHECK_THROWS_AS(HttpAdapterAgent(c), ConfigError);
}

namespace {

// In-process HTTP stub that records requests and serves a scripted sequence
// of (status, body) responses.
class StubServer {
 public:
  explicit StubServer(std::vector<std::pair<int, std::string>> responses)
      : responses_(std::move(responses)) {
    server_.Post("/v1/complete", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mutex_);
      requests_.push_back(req);
      std::size_t i = std::min(hits_++, responses_.size() - 1);
      res.status = responses_[i].first;
      res.set_content(responses_[i].second, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1/complete";
  }
  std::size_t hit_count() {
    std::lock_guard<std::mutex> lock(mutex_);
    return hits_;
  }
  httplib::Request request(std::size_t i) {
    std::lock_guard<std::mutex> lock(mutex_);
    return requests_.at(i);
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  std::vector<std::pair<int, std::string>> responses_;
  std::vector<httplib::Request> requests_;
  std::size_t hits_ = 0;
  std::mutex mutex_;
  int port_ = 0;
};

AdapterConfig stub_config(const StubServer& stub) {
  AdapterConfig c;
  c.name = "stub";
  c.endpoint = stub.endpoint();
  c.max_attempts = 3;
  c.backoff_ms = 1;
  return c;
}

}  // namespace

TEST_CASE("http adapter: completion round trip with encoded image parts") {
  StubServer stub({{200, "{\"text\": \"Image B\", \"token_logprobs\": [[\"Image\", -0.25]]}"}});
  HttpAdapterAgent agent(stub_config(stub));
  AgentResponse r = complete(agent, prompt_with_images(1));
  CHECK(r.text == "Image B");
  REQUIRE(r.token_logprobs.has_value());
  CHECK((*r.token_logprobs)[0].second == -0.25);
  CHECK_FALSE(r.raw.empty());

  auto body = nlohmann::json::parse(stub.request(0).body);
  REQUIRE(body["parts"].size() == 2);
  CHECK(body["parts"][0]["type"] == "text");
  CHECK(body["parts"][0]["text"] == "question");
  CHECK(body["parts"][1]["type"] == "image");
  // The image travels as base64 PNG, never as a file path.
  std::string png_b64 = body["parts"][1]["png_base64"].get<std::string>();
  CHECK_FALSE(png_b64.empty());
  CHECK(base64_encode(png::encode(Raster::solid(1, 1, 1, 2, 3))) == png_b64);
  CHECK(body["temperature"] == 0.0);
}

TEST_CASE("http adapter: 5xx retries then succeeds, 4xx fails immediately") {
  StubServer flaky({{500, "busy"}, {503, "busy"}, {200, "{\"text\": \"ok\"}"}});
  HttpAdapterAgent agent(stub_config(flaky));
  CHECK(complete(agent, text_prompt("q")).text == "ok");
  CHECK(flaky.hit_count() == 3);

  StubServer rejecting({{400, "{\"error\": \"bad request\"}"}});
  HttpAdapterAgent agent2(stub_config(rejecting));
  CHECK_THROWS_WITH(complete(agent2, text_prompt("q")),
                    Catch::Matchers::ContainsSubstring("status 400"));
  CHECK(rejecting.hit_count() == 1);

  StubServer always_down({{500, "busy"}});
  AdapterConfig c = stub_config(always_down);
  c.max_attempts = 2;
  HttpAdapterAgent agent3(c);
  CHECK_THROWS_WITH(complete(agent3, text_prompt("q")),
                    Catch::Matchers::ContainsSubstring("after 2 attempts"));
  CHECK(always_down.hit_count() == 2);
}

TEST_CASE("http adapter: bearer token comes from the environment only") {
  StubServer stub({{200, "{\"text\": \"ok\"}"}, {200, "{\"text\": \"ok\"}"}});
  AdapterConfig c = stub_config(stub);
  c.auth_env = "ICCA_TEST_TOKEN";

  unsetenv("ICCA_TEST_TOKEN");
  HttpAdapterAgent agent(c);
  complete(agent, text_prompt("q"));
  CHECK_FALSE(stub.request(0).has_header("Authorization"));

  setenv("ICCA_TEST_TOKEN", "sekret-value", 1);
  complete(agent, text_prompt("q"));
  CHECK(stub.request(1).get_header_value("Authorization") == "Bearer sekret-value");
  unsetenv("ICCA_TEST_TOKEN");
}

TEST_CASE("http adapter: score mode posts the continuation") {
  StubServer stub({{200, "{\"logprob\": -3.5, \"tokens\": 4}"}});
  AdapterConfig c = stub_config(stub);
  c.supports_scoring = true;
  HttpAdapterAgent agent(c);
  ScoreResult r = score_text(agent, text_prompt("prefix"), "red dot");
  CHECK(r.logprob == -3.5);
  CHECK(r.tokens == 4);
  auto body = nlohmann::json::parse(stub.request(0).body);
  CHECK(body["mode"] == "score");
  CHECK(body["continuation"] == "red dot");
}

TEST_CASE("http adapter: malformed responses are agent errors") {
  StubServer notjson({{200, "<html>oops</html>"}});
  HttpAdapterAgent agent(stub_config(notjson));
  CHECK_THROWS_AS(complete(agent, text_prompt("q")), AgentError);

  StubServer notext({{200, "{\"message\": \"hi\"}"}});
  HttpAdapterAgent agent2(stub_config(notext));
  CHECK_THROWS_WITH(complete(agent2, text_prompt("q")),
                    Catch::Matchers::ContainsSubstring("text"));
}
