#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

// Chat-completion client shared by negative generation and judging.
namespace spfg::backend {

struct ChatRequest {
  std::string model;
  std::string prompt;
  double temperature = 0.7;
};

// {"model": ..., "messages": [{"role": "user", "content": prompt}], "temperature": t}
std::string request_body(const ChatRequest& request);

// Extracts choices[0].message.content; throws BackendError on other shapes.
std::string parse_chat_response(std::string_view body);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Raw assistant text. Throws BackendError when the service cannot be reached.
  virtual std::string complete(const ChatRequest& request) = 0;
};

struct HttpBackendConfig {
  std::string url;  // e.g. http://localhost:8080/v1/chat/completions
  std::string model;
  double temperature = 0.7;
  std::string api_key_env;  // name of the variable, never its value
  std::chrono::seconds timeout{60};
  std::size_t max_in_flight = 4;
};

class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpBackendConfig config);
  std::string complete(const ChatRequest& request) override;
  const HttpBackendConfig& config() const { return config_; }

 private:
  HttpBackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
};

// Stores each raw response under <dir>/<sha256(request body)>.txt and serves
// repeats from disk. With replay_only set, a cache miss is a BackendError.
class CachingBackend : public ChatBackend {
 public:
  CachingBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path dir, bool replay_only = false);
  std::string complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::filesystem::path dir_;
  bool replay_only_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  // Injected so tests need not wait; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;

  void wait_before_attempt(int attempt) const;  // attempt is 1-based; no wait before the first
};

}  // namespace spfg::backend
