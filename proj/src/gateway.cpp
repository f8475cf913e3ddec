#include "theraloop/gateway.hpp"

#include <chrono>

#include "httplib.h"

namespace theraloop {

std::string_view to_string(BackendKind k) { return k == BackendKind::Remote ? "remote" : "stub"; }

// ---- stub -----------------------------------------------------------------

void StubBackend::on(std::string template_id, Handler handler) {
  handlers_[std::move(template_id)] = std::move(handler);
}

bool StubBackend::has(std::string_view template_id) const { return handlers_.find(template_id) != handlers_.end(); }

std::string StubBackend::send(const PromptRequest& request) {
  auto it = handlers_.find(request.template_id);
  if (it == handlers_.end()) {
    throw TransportError(request.template_id, "no stub handler registered for " + request.template_id);
  }
  return it->second(request.rendered_prompt);
}

// ---- remote ---------------------------------------------------------------

RemoteBackend::RemoteBackend(RemoteOptions options)
    : options_(std::move(options)), inflight_(std::max(1, options_.max_inflight)) {
  const std::string& url = options_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("gateway.endpoint must be an absolute URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
}

json RemoteBackend::build_payload(const PromptRequest& request, const std::string& model) {
  json payload = {
      {"model", model},
      {"messages", json::array({{{"role", "user"}, {"content", request.rendered_prompt}}})},
      {"temperature", request.temperature},
      // Roughly four characters per token.
      {"max_tokens", std::max(1, request.max_output_chars / 4)},
  };
  return payload;
}

std::string RemoteBackend::parse_response(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("response body is not JSON");
  const auto& choices = j.at("choices");
  if (!choices.is_array() || choices.empty()) throw std::runtime_error("response has no choices");
  return choices.at(0).at("message").at("content").get<std::string>();
}

std::string RemoteBackend::send(const PromptRequest& request) {
  inflight_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{inflight_};

  httplib::Client client(scheme_host_);
  const auto timeout = std::chrono::milliseconds(options_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

  const std::string body = build_payload(request, options_.model).dump();
  auto res = client.Post(path_, headers, body, "application/json");
  if (!res) {
    throw TransportError(request.template_id,
                         "remote endpoint unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError(request.template_id, "remote endpoint returned HTTP " + std::to_string(res->status));
  }
  try {
    return parse_response(res->body);
  } catch (const std::exception& e) {
    throw TransportError(request.template_id, std::string("malformed remote response: ") + e.what());
  }
}

// ---- schemas --------------------------------------------------------------

void SchemaRegistry::add(std::string schema_id, Validator v) { validators_[std::move(schema_id)] = std::move(v); }

bool SchemaRegistry::has(std::string_view schema_id) const {
  return validators_.find(schema_id) != validators_.end();
}

std::vector<std::string> SchemaRegistry::check(std::string_view schema_id, const json& value) const {
  auto it = validators_.find(schema_id);
  if (it == validators_.end()) return {"unregistered schema " + std::string(schema_id)};
  return it->second(value);
}

std::optional<json> extract_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    // Scan for the matching brace, honoring strings.
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        json j = json::parse(text.substr(start, i - start + 1), nullptr, false);
        if (!j.is_discarded() && j.is_object()) return j;
        break;
      }
    }
  }
  return std::nullopt;
}

// ---- gateway --------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(options) {
  if (!backend_) throw ConfigError("gateway requires a backend");
  if (options_.retries < 1) throw ConfigError("gateway.retries must be >= 1");
}

std::string Gateway::call_once(const PromptRequest& request) {
  if (calls_.fetch_add(1) >= options_.call_budget) {
    calls_.fetch_sub(1);
    throw BudgetExceeded(request.template_id,
                         "call budget of " + std::to_string(options_.call_budget) + " exhausted");
  }
  return backend_->send(request);
}

Completion Gateway::complete(const PromptRequest& request) {
  if (request.rendered_prompt.empty()) throw std::invalid_argument("rendered_prompt must be non-empty");
  if (request.max_output_chars <= 0) throw std::invalid_argument("max_output_chars must be positive");

  const auto t0 = std::chrono::steady_clock::now();
  Completion c;
  c.backend = backend_->kind();
  for (int attempt = 1;; ++attempt) {
    try {
      c.text = call_once(request);
      c.attempts = attempt;
      break;
    } catch (const TransportError&) {
      // The stub is deterministic; retrying it cannot help.
      if (attempt >= options_.retries || backend_->kind() == BackendKind::Stub) throw;
    }
  }
  if (static_cast<int>(c.text.size()) > request.max_output_chars) c.text.resize(request.max_output_chars);
  c.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

StructuredText Gateway::complete_structured(PromptRequest request, std::string_view schema_id) {
  if (!schemas_.has(schema_id)) throw std::invalid_argument("schema not registered: " + std::string(schema_id));
  request.response_schema_id = std::string(schema_id);
  const std::string base_prompt = request.rendered_prompt;

  std::string last_raw;
  std::vector<std::string> violations;
  for (int attempt = 1; attempt <= options_.retries; ++attempt) {
    if (attempt > 1) {
      std::string repair = base_prompt;
      repair += "\n\nYour previous response was rejected. Schema violations:\n";
      for (const auto& v : violations) repair += "- " + v + "\n";
      repair += "Respond again with a single JSON object that satisfies the schema.\n";
      request.rendered_prompt = std::move(repair);
    }
    Completion c = complete(request);
    last_raw = c.text;
    auto parsed = extract_json_object(c.text);
    if (!parsed) {
      violations = {"response does not contain a JSON object"};
      continue;
    }
    violations = schemas_.check(schema_id, *parsed);
    if (violations.empty()) return StructuredText{std::move(*parsed), std::move(last_raw), attempt};
  }
  throw SchemaFailure(request.template_id, std::move(last_raw), std::move(violations));
}

}  // namespace theraloop
