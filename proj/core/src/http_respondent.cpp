#include <chrono>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "persona/error.hpp"
#include "persona/respondent.hpp"

namespace persona {

namespace {

using nlohmann::json;

class HttpRespondent final : public Respondent {
 public:
  explicit HttpRespondent(const RespondentConfig& cfg) : cfg_(cfg) {
    if (cfg.endpoint.empty()) {
      throw ValidationError("http backend requires an endpoint URL");
    }
    base_ = cfg.endpoint;
    const auto scheme = base_.find("://");
    const auto slash =
        base_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
      path_prefix_ = base_.substr(slash);
      base_ = base_.substr(0, slash);
      while (!path_prefix_.empty() && path_prefix_.back() == '/') {
        path_prefix_.pop_back();
      }
    }
    idle_.push_back(make_client());  // validate the URL eagerly
  }

  RawResponse ask(const RenderedPrompt& prompt, const AskContext&) override {
    // the payload is exactly the rendered prompt, nothing added
    const json body = {
        {"model", cfg_.model},
        {"temperature", cfg_.temperature},
        {"messages",
         json::array({json{{"role", "system"}, {"content", prompt.instructions}},
                      json{{"role", "user"}, {"content", prompt.user_text()}}})},
    };
    const std::string payload = body.dump();
    const std::string path = path_prefix_ + "/v1/chat/completions";

    // one connection per in-flight request: a single httplib client
    // serializes on its socket, which would defeat max_concurrent
    Lease client(*this);
    const auto start = std::chrono::steady_clock::now();
    for (int attempt = 0;; ++attempt) {
      auto res = client->Post(path, payload, "application/json");
      if (res && res->status == 200) {
        RawResponse out;
        out.text = extract_content(res->body);
        out.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        out.attempt_index = attempt;
        return out;
      }
      const bool transient = !res || res->status >= 500 ||
                             res->status == 429 || res->status == 408;
      if (!transient || attempt >= cfg_.max_retries) {
        std::string detail =
            res ? "status " + std::to_string(res->status)
                : "connection error (" + httplib::to_string(res.error()) + ")";
        throw BackendError("POST " + path + " failed after " +
                           std::to_string(attempt + 1) + " attempt(s): " +
                           detail);
      }
      std::this_thread::sleep_for(cfg_.backoff * (1 << attempt));
    }
  }

  std::string describe() const override {
    return "http:" + cfg_.endpoint + "#" + cfg_.model;
  }

 private:
  std::unique_ptr<httplib::Client> make_client() const {
    auto client = std::make_unique<httplib::Client>(base_);
    const auto secs =
        std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(
        cfg_.timeout - secs);
    client->set_connection_timeout(secs.count(), usecs.count());
    client->set_read_timeout(secs.count(), usecs.count());
    client->set_write_timeout(secs.count(), usecs.count());
    if (const char* key = std::getenv("PERSONA_API_KEY");
        key != nullptr && *key != '\0') {
      client->set_default_headers(
          {{"Authorization", std::string("Bearer ") + key}});
    }
    return client;
  }

  // checks a pooled client out for the duration of one ask
  struct Lease {
    explicit Lease(HttpRespondent& owner) : owner_(owner) {
      std::lock_guard<std::mutex> lock(owner_.pool_mu_);
      if (!owner_.idle_.empty()) {
        client_ = std::move(owner_.idle_.back());
        owner_.idle_.pop_back();
      }
      if (!client_) client_ = owner_.make_client();
    }
    ~Lease() {
      std::lock_guard<std::mutex> lock(owner_.pool_mu_);
      owner_.idle_.push_back(std::move(client_));
    }
    httplib::Client* operator->() const { return client_.get(); }

    HttpRespondent& owner_;
    std::unique_ptr<httplib::Client> client_;
  };

  static std::string extract_content(const std::string& body) {
    const json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") ||
        !doc.at("choices").is_array() || doc.at("choices").empty()) {
      throw BackendError("malformed backend reply: " + body.substr(0, 200));
    }
    const json& first = doc.at("choices").at(0);
    if (!first.contains("message") ||
        !first.at("message").contains("content") ||
        !first.at("message").at("content").is_string()) {
      throw BackendError("malformed backend reply: " + body.substr(0, 200));
    }
    return first.at("message").at("content").get<std::string>();
  }

  RespondentConfig cfg_;
  std::string base_;
  std::string path_prefix_;
  std::mutex pool_mu_;
  std::vector<std::unique_ptr<httplib::Client>> idle_;
};

}  // namespace

std::unique_ptr<Respondent> make_http_respondent(const RespondentConfig& cfg) {
  return std::make_unique<HttpRespondent>(cfg);
}

}  // namespace persona
