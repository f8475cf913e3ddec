#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "theraloop/domain.hpp"

namespace theraloop {

struct PromptRequest {
  std::string template_id;
  std::string rendered_prompt;
  std::optional<std::string> response_schema_id;
  int max_output_chars = 4000;
  double temperature = 0.0;
};

enum class BackendKind { Remote, Stub };
std::string_view to_string(BackendKind k);

struct Completion {
  std::string text;
  BackendKind backend = BackendKind::Stub;
  int attempts = 1;
  std::int64_t latency_ms = 0;
};

struct StructuredText {
  json value;
  std::string raw;
  int attempts = 1;
};

// All gateway faults carry the template that triggered them.
class GatewayError : public std::runtime_error {
 public:
  GatewayError(std::string template_id, const std::string& what)
      : std::runtime_error(what), template_id_(std::move(template_id)) {}
  const std::string& template_id() const { return template_id_; }

 private:
  std::string template_id_;
};

class TransportError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class BudgetExceeded : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class SchemaFailure : public GatewayError {
 public:
  SchemaFailure(std::string template_id, std::string last_raw, std::vector<std::string> violations)
      : GatewayError(std::move(template_id), "structured output failed schema validation"),
        last_raw_(std::move(last_raw)),
        violations_(std::move(violations)) {}
  const std::string& last_raw() const { return last_raw_; }
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::string last_raw_;
  std::vector<std::string> violations_;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendKind kind() const = 0;
  // Throws TransportError on delivery failure.
  virtual std::string send(const PromptRequest& request) = 0;
};

// Deterministic backend: one handler per template_id. Handlers receive the
// rendered prompt and must be pure functions of it.
class StubBackend final : public Backend {
 public:
  using Handler = std::function<std::string(std::string_view rendered_prompt)>;

  void on(std::string template_id, Handler handler);
  bool has(std::string_view template_id) const;
  BackendKind kind() const override { return BackendKind::Stub; }
  std::string send(const PromptRequest& request) override;

 private:
  std::map<std::string, Handler, std::less<>> handlers_;
};

struct RemoteOptions {
  std::string endpoint;  // e.g. http://host:port/v1/chat/completions
  std::string model;
  std::string api_key;
  int max_inflight = 4;
  int timeout_ms = 30000;
};

// OpenAI-compatible chat-completion client.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteOptions options);
  BackendKind kind() const override { return BackendKind::Remote; }
  std::string send(const PromptRequest& request) override;

  static json build_payload(const PromptRequest& request, const std::string& model);
  static std::string parse_response(const std::string& body);

 private:
  RemoteOptions options_;
  std::counting_semaphore<1024> inflight_;
  std::string scheme_host_;
  std::string path_;
};

// Decorator that counts calls reaching the wrapped backend.
class CountingBackend final : public Backend {
 public:
  explicit CountingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
  BackendKind kind() const override { return inner_->kind(); }
  std::string send(const PromptRequest& request) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_->send(request);
  }
  std::int64_t calls() const { return calls_.load(); }

 private:
  std::shared_ptr<Backend> inner_;
  std::atomic<std::int64_t> calls_{0};
};

// Schema validators return the list of violations (empty = valid).
class SchemaRegistry {
 public:
  using Validator = std::function<std::vector<std::string>(const json&)>;
  void add(std::string schema_id, Validator v);
  bool has(std::string_view schema_id) const;
  std::vector<std::string> check(std::string_view schema_id, const json& value) const;

 private:
  std::map<std::string, Validator, std::less<>> validators_;
};

struct GatewayOptions {
  int retries = 3;
  std::int64_t call_budget = 100000;
};

class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});

  Completion complete(const PromptRequest& request);
  StructuredText complete_structured(PromptRequest request, std::string_view schema_id);

  SchemaRegistry& schemas() { return schemas_; }
  const SchemaRegistry& schemas() const { return schemas_; }
  BackendKind backend_kind() const { return backend_->kind(); }
  std::int64_t calls_made() const { return calls_.load(); }
  const GatewayOptions& options() const { return options_; }

 private:
  std::string call_once(const PromptRequest& request);

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  SchemaRegistry schemas_;
  std::atomic<std::int64_t> calls_{0};
};

// Pulls the first JSON object out of a completion (models often wrap it in
// prose or code fences). Returns nullopt when nothing parses.
std::optional<json> extract_json_object(std::string_view text);

}  // namespace theraloop
