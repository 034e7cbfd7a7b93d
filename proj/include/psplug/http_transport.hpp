#pragma once

#include <cstdlib>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "psplug/errors.hpp"
#include "psplug/judge.hpp"

namespace psplug {

// Generic chat-completion POST: {model, messages:[{role, content}]} against an
// OpenAI-compatible endpoint. Endpoint and key come from PSPLUG_JUDGE_URL and
// PSPLUG_JUDGE_KEY unless passed explicitly.
class HttpChatTransport final : public ChatTransport {
 public:
  explicit HttpChatTransport(std::string endpoint = "", std::string api_key = "",
                             int timeout_seconds = 60) {
    if (endpoint.empty()) {
      const char* env = std::getenv("PSPLUG_JUDGE_URL");
      if (env == nullptr || *env == '\0') {
        throw ConfigError("judge endpoint not configured: set PSPLUG_JUDGE_URL (and "
                          "PSPLUG_JUDGE_KEY) or pass an endpoint explicitly");
      }
      endpoint = env;
    }
    if (api_key.empty()) {
      const char* env = std::getenv("PSPLUG_JUDGE_KEY");
      if (env == nullptr || *env == '\0') {
        throw ConfigError("judge credentials not configured: set PSPLUG_JUDGE_KEY (use a dummy "
                          "value for keyless endpoints)");
      }
      api_key = env;
    }
    const size_t scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) {
      throw ConfigError("judge endpoint must be an http(s) URL, got '" + endpoint + "'");
    }
    const size_t path_start = endpoint.find('/', scheme_end + 3);
    base_ = path_start == std::string::npos ? endpoint : endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
    api_key_ = std::move(api_key);
    timeout_seconds_ = timeout_seconds;
  }

  std::string complete(const std::string& model,
                       std::span<const ChatMessage> messages) override {
    nlohmann::json body;
    body["model"] = model;
    body["messages"] = nlohmann::json::array();
    for (const ChatMessage& m : messages) {
      body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    }
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    const httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    httplib::Result result = client.Post(path_, headers, body.dump(), "application/json");
    if (!result) {
      throw TransportError("judge request to " + base_ + path_ + " failed: " +
                           httplib::to_string(result.error()));
    }
    if (result->status < 200 || result->status >= 300) {
      throw TransportError("judge endpoint returned HTTP " + std::to_string(result->status));
    }
    try {
      const nlohmann::json reply = nlohmann::json::parse(result->body);
      if (reply.contains("choices") && !reply["choices"].empty()) {
        return reply["choices"][0].at("message").at("content").get<std::string>();
      }
      if (reply.contains("text")) return reply["text"].get<std::string>();
      throw ParseError("judge reply carries neither choices[].message.content nor text");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed judge reply: ") + e.what());
    }
  }

 private:
  std::string base_;
  std::string path_;
  std::string api_key_;
  int timeout_seconds_ = 60;
};

}  // namespace psplug
