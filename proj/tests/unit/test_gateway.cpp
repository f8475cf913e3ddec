#include <doctest.h>

#include <httplib.h>

#include <thread>

#include "support.hpp"

using namespace theraloop;

namespace {

PromptRequest request(std::string template_id, std::string prompt) {
  PromptRequest r;
  r.template_id = std::move(template_id);
  r.rendered_prompt = std::move(prompt);
  return r;
}

std::shared_ptr<StubBackend> echo_stub(const std::string& reply) {
  auto stub = std::make_shared<StubBackend>();
  stub->on("echo", [reply](std::string_view) { return reply; });
  return stub;
}

void add_object_schema(Gateway& gw) {
  gw.schemas().add("obj.v1", [](const json& j) {
    std::vector<std::string> v;
    if (!j.contains("value") || !j.at("value").is_number()) v.emplace_back("'value' must be a number");
    return v;
  });
}

}  // namespace

TEST_CASE("stub completion returns the handler output verbatim") {
  Gateway gw(echo_stub("fixed reply"));
  const auto c = gw.complete(request("echo", "hello"));
  CHECK(c.text == "fixed reply");
  CHECK(c.attempts == 1);
  CHECK(c.backend == BackendKind::Stub);
  CHECK(c.latency_ms >= 0);
}

TEST_CASE("stub completions are referentially transparent") {
  auto stub = std::make_shared<StubBackend>();
  stub->on("rev", [](std::string_view p) { return std::string(p.rbegin(), p.rend()); });
  Gateway gw(stub);
  const auto a = gw.complete(request("rev", "abc def"));
  const auto b = gw.complete(request("rev", "abc def"));
  CHECK(a.text == b.text);
  CHECK(a.text == "fed cba");
}

TEST_CASE("request invariants are enforced") {
  Gateway gw(echo_stub("x"));
  CHECK_THROWS_AS(gw.complete(request("echo", "")), std::invalid_argument);
  auto r = request("echo", "p");
  r.max_output_chars = 0;
  CHECK_THROWS_AS(gw.complete(r), std::invalid_argument);
  CHECK_THROWS_AS(Gateway(echo_stub("x"), GatewayOptions{0, 10}), ConfigError);
}

TEST_CASE("unregistered stub template is a transport fault carrying the template id") {
  Gateway gw(std::make_shared<StubBackend>());
  try {
    gw.complete(request("missing.v1.txt", "p"));
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.template_id() == "missing.v1.txt");
  }
}

TEST_CASE("structured completion: valid on the first attempt") {
  Gateway gw(echo_stub("Here you go: {\"value\": 3}"));
  add_object_schema(gw);
  const auto st = gw.complete_structured(request("echo", "p"), "obj.v1");
  CHECK(st.value.at("value") == 3);
  CHECK(st.attempts == 1);
}

TEST_CASE("structured completion: junk then valid after the repair prompt") {
  auto stub = std::make_shared<StubBackend>();
  stub->on("scripted", [](std::string_view p) {
    return p.find("Schema violations") == std::string_view::npos ? std::string("not json") : std::string("{\"value\": 1}");
  });
  Gateway gw(stub);
  add_object_schema(gw);
  const auto st = gw.complete_structured(request("scripted", "p"), "obj.v1");
  CHECK(st.attempts == 2);
  CHECK(st.value.at("value") == 1);
  CHECK(gw.calls_made() == 2);
}

TEST_CASE("structured completion: the repair prompt quotes the violations verbatim") {
  auto stub = std::make_shared<StubBackend>();
  std::vector<std::string> seen;
  stub->on("s", [&seen](std::string_view p) {
    seen.emplace_back(p);
    return std::string("{\"value\": \"text\"}");
  });
  Gateway gw(stub, GatewayOptions{2, 100});
  add_object_schema(gw);
  CHECK_THROWS_AS(gw.complete_structured(request("s", "base"), "obj.v1"), SchemaFailure);
  REQUIRE(seen.size() == 2);
  CHECK(seen[1].find("'value' must be a number") != std::string::npos);
}

TEST_CASE("structured completion: exhaustion raises SchemaFailure with the last raw output") {
  Gateway gw(echo_stub("junk"), GatewayOptions{3, 100});
  add_object_schema(gw);
  try {
    gw.complete_structured(request("echo", "p"), "obj.v1");
    FAIL("expected SchemaFailure");
  } catch (const SchemaFailure& e) {
    CHECK(e.last_raw() == "junk");
    CHECK_FALSE(e.violations().empty());
    CHECK(e.template_id() == "echo");
  }
  CHECK(gw.calls_made() == 3);
}

TEST_CASE("call budget caps backend calls") {
  auto counting = std::make_shared<CountingBackend>(echo_stub("x"));
  Gateway gw(counting, GatewayOptions{3, 5});
  for (int i = 0; i < 5; ++i) gw.complete(request("echo", "p"));
  CHECK_THROWS_AS(gw.complete(request("echo", "p")), BudgetExceeded);
  CHECK(counting->calls() == 5);
  CHECK(gw.calls_made() == 5);
}

TEST_CASE("call budget holds under concurrent use") {
  auto counting = std::make_shared<CountingBackend>(echo_stub("x"));
  Gateway gw(counting, GatewayOptions{3, 50});
  std::atomic<int> ok{0}, refused{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 20; ++i) {
        try {
          gw.complete(request("echo", "p"));
          ++ok;
        } catch (const BudgetExceeded&) {
          ++refused;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 50);
  CHECK(refused == 110);
  CHECK(counting->calls() == 50);
}

TEST_CASE("extract_json_object finds the first object in prose") {
  CHECK(extract_json_object("```json\n{\"a\": {\"b\": \"}\"}}\n```")->at("a").at("b") == "}");
  CHECK(extract_json_object("{broken} then {\"ok\": true}")->at("ok") == true);
  CHECK_FALSE(extract_json_object("no braces").has_value());
}

TEST_CASE("remote payload follows the chat-completion wire format") {
  auto r = request("radiologist.v1.txt", "prompt text");
  r.max_output_chars = 4000;
  const json p = RemoteBackend::build_payload(r, "some-model");
  CHECK(p.at("model") == "some-model");
  CHECK(p.at("messages").at(0).at("role") == "user");
  CHECK(p.at("messages").at(0).at("content") == "prompt text");
  CHECK(p.at("temperature") == 0.0);
  CHECK(p.at("max_tokens") == 1000);
  CHECK(RemoteBackend::parse_response(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
  CHECK_THROWS(RemoteBackend::parse_response("{}"));
}

TEST_CASE("unreachable remote endpoint raises TransportError after retries") {
  RemoteOptions o;
  o.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  o.model = "m";
  o.timeout_ms = 500;
  Gateway gw(std::make_shared<RemoteBackend>(o), GatewayOptions{2, 10});
  try {
    gw.complete(request("t.v1", "p"));
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.template_id() == "t.v1");
  }
  CHECK(gw.calls_made() == 2);
}

TEST_CASE("remote backend round-trips against a local chat-completion server") {
  httplib::Server server;
  std::string seen_auth;
  json seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = json::parse(req.body);
    res.set_content(R"({"choices":[{"message":{"content":"{\"value\": 7}"}}]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteOptions o;
  o.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  o.model = "local-model";
  o.api_key = "secret";
  Gateway gw(std::make_shared<RemoteBackend>(o));
  add_object_schema(gw);
  const auto st = gw.complete_structured(request("t.v1", "hello"), "obj.v1");
  server.stop();
  th.join();
  CHECK(st.value.at("value") == 7);
  CHECK(seen_auth == "Bearer secret");
  CHECK(seen_body.at("model") == "local-model");
}

TEST_CASE("remote endpoint must be an absolute URL") {
  RemoteOptions o;
  o.endpoint = "localhost:8000";
  CHECK_THROWS_AS(RemoteBackend{o}, ConfigError);
}
