#include "spfg/backend.hpp"

#include <cstdlib>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "spfg/digest.hpp"
#include "spfg/error.hpp"

namespace spfg::backend {

std::string request_body(const ChatRequest& request) {
  nlohmann::ordered_json j;
  j["model"] = request.model;
  j["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", request.prompt}}});
  j["temperature"] = request.temperature;
  return j.dump();
}

std::string parse_chat_response(std::string_view body) {
  try {
    const auto j = nlohmann::json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("unexpected chat response: ") + e.what());
  }
}

HttpChatBackend::HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("backend url needs a scheme: " + config_.url);
  const auto path_start = config_.url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : config_.url.substr(path_start);
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  }
}

std::string HttpChatBackend::complete(const ChatRequest& request) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path_, headers, request_body(request), "application/json");
  if (!res) {
    throw BackendError("request to " + scheme_host_port_ + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendError("backend returned HTTP " + std::to_string(res->status));
  }
  return parse_chat_response(res->body);
}

CachingBackend::CachingBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path dir,
                               bool replay_only)
    : inner_(std::move(inner)), dir_(std::move(dir)), replay_only_(replay_only) {}

std::string CachingBackend::complete(const ChatRequest& request) {
  const auto path = dir_ / (sha256_hex(request_body(request)) + ".txt");
  if (std::filesystem::exists(path)) return read_file(path);
  if (replay_only_ || !inner_) throw BackendError("no cached response for request " + path.filename().string());
  auto text = inner_->complete(request);
  write_file(path, text);
  return text;
}

void RetryPolicy::wait_before_attempt(int attempt) const {
  if (attempt <= 1) return;
  auto delay = initial_backoff * (1LL << (attempt - 2));
  if (sleep) {
    sleep(delay);
  } else {
    std::this_thread::sleep_for(delay);
  }
}

}  // namespace spfg::backend
