#pragma once

// Minimal chat-completion client (OpenAI-compatible wire format) used by the
// HTTP policy and judge backends. Consumers that want https must define
// CPPHTTPLIB_OPENSSL_SUPPORT and link OpenSSL before including this header.

#include <httplib.h>

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/twin.hpp"

namespace twinseg {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  std::vector<std::string> stop;
  double temperature = 0.0;
  int max_tokens = 512;
  // Extra top-level fields merged into the request body.
  Json extra = Json::object();
};

struct ChatReply {
  std::string content;
  std::string finish_reason;
};

struct Endpoint {
  std::string base_url;  // e.g. "http://127.0.0.1:8000/v1"
  std::string model;
  std::string token_env;  // environment variable holding a bearer token
  int timeout_s = 120;
};

class ChatClient {
 public:
  explicit ChatClient(Endpoint ep) : ep_(std::move(ep)) {
    const auto scheme_end = ep_.base_url.find("://");
    if (scheme_end == std::string::npos) throw OperationalError("endpoint URL needs a scheme: " + ep_.base_url);
    const auto path_start = ep_.base_url.find('/', scheme_end + 3);
    host_ = ep_.base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "" : ep_.base_url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
  }

  const Endpoint& endpoint() const noexcept { return ep_; }

  // Throws BackendError on transport failure, non-2xx status or a reply
  // without choices[0].message.content.
  ChatReply complete(const ChatRequest& req) const {
    Json body = req.extra.is_object() ? req.extra : Json::object();
    body["model"] = ep_.model;
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_tokens;
    Json msgs = Json::array();
    for (const auto& m : req.messages) msgs.push_back(Json{{"role", m.role}, {"content", m.content}});
    body["messages"] = std::move(msgs);
    if (!req.stop.empty()) body["stop"] = req.stop;

    httplib::Client cli(host_);
    cli.set_connection_timeout(ep_.timeout_s, 0);
    cli.set_read_timeout(ep_.timeout_s, 0);
    cli.set_write_timeout(ep_.timeout_s, 0);
    httplib::Headers headers;
    if (!ep_.token_env.empty()) {
      if (const char* tok = std::getenv(ep_.token_env.c_str()); tok && *tok) {
        headers.emplace("Authorization", std::string("Bearer ") + tok);
      }
    }
    auto res = cli.Post(path_ + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw BackendError("request to " + ep_.base_url + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) {
      throw BackendError("endpoint " + ep_.base_url + " returned HTTP " + std::to_string(res->status));
    }
    Json reply = Json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) throw BackendError("endpoint returned non-JSON body");
    try {
      const Json& choice = reply.at("choices").at(0);
      ChatReply out;
      out.content = choice.at("message").at("content").get<std::string>();
      if (auto fr = choice.find("finish_reason"); fr != choice.end() && fr->is_string()) out.finish_reason = fr->get<std::string>();
      return out;
    } catch (const Json::exception& e) {
      throw BackendError(std::string("unexpected reply shape: ") + e.what());
    }
  }

 private:
  Endpoint ep_;
  std::string host_;
  std::string path_;
};

}  // namespace twinseg
