#pragma once

// Live model backend over HTTP(S). The neutral payload {model, prompt,
// image_base64} is sent as is ("generic") or mapped onto a vendor schema.
// Connection failures, timeouts, 429 and 5xx are retryable transport errors;
// other non-2xx statuses are not.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include "gaugeread/llm_reader.hpp"

#include <cstdlib>
#include <string>

namespace gauge {

enum class Provider { generic, openai, gemini };

inline Provider provider_from_string(const std::string& s)
{
    if (s == "generic") return Provider::generic;
    if (s == "openai") return Provider::openai;
    if (s == "gemini") return Provider::gemini;
    throw std::invalid_argument("unknown provider: " + s);
}

struct HttpBackendConfig {
    std::string endpoint;  // scheme://host[:port]/path
    std::string api_key;
    std::string model;
    Provider provider = Provider::generic;

    /// GAUGE_LLM_ENDPOINT, GAUGE_LLM_API_KEY, GAUGE_LLM_MODEL.
    static HttpBackendConfig from_env()
    {
        auto env = [](const char* k) {
            const char* v = std::getenv(k);
            return v ? std::string(v) : std::string();
        };
        return {env("GAUGE_LLM_ENDPOINT"), env("GAUGE_LLM_API_KEY"), env("GAUGE_LLM_MODEL"), Provider::generic};
    }
};

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline SplitUrl split_url(const std::string& url)
{
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw std::invalid_argument("endpoint must start with http:// or https://");
    const std::string s = url.substr(0, scheme);
    if (s != "http" && s != "https") throw std::invalid_argument("unsupported endpoint scheme: " + s);
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

/// Vendor request body for the neutral payload.
inline nlohmann::json adapt_request(Provider p, const nlohmann::json& payload)
{
    switch (p) {
    case Provider::generic:
        return payload;
    case Provider::openai:
        return {{"model", payload.at("model")},
                {"messages",
                 {{{"role", "user"},
                   {"content",
                    {{{"type", "text"}, {"text", payload.at("prompt")}},
                     {{"type", "image_url"},
                      {"image_url",
                       {{"url", "data:image/png;base64," + payload.at("image_base64").get<std::string>()}}}}}}}}}};
    case Provider::gemini:
        return {{"contents",
                 {{{"parts",
                    {{{"text", payload.at("prompt")}},
                     {{"inline_data", {{"mime_type", "image/png"}, {"data", payload.at("image_base64")}}}}}}}}}};
    }
    throw std::invalid_argument("adapt_request: bad provider");
}

/// Model text from a vendor response body. Generic accepts {"text": ...} or plain text.
inline std::string adapt_response(Provider p, const std::string& body)
{
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    try {
        switch (p) {
        case Provider::generic:
            if (j.is_object() && j.contains("text")) return j.at("text").get<std::string>();
            return body;
        case Provider::openai:
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        case Provider::gemini:
            return j.at("candidates").at(0).at("content").at("parts").at(0).at("text").get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("unexpected model response shape: ") + e.what());
    }
    return body;
}

class HttpBackend final : public ModelBackend {
public:
    explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)), url_(split_url(cfg_.endpoint)) {}

    std::string name() const override { return "http"; }

    std::string complete(const ReadingRequest&, const nlohmann::json& payload, std::chrono::milliseconds timeout) override
    {
        httplib::Client cli(url_.origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        cli.set_write_timeout(secs.count(), usecs.count());

        httplib::Headers headers;
        if (!cfg_.api_key.empty()) {
            if (cfg_.provider == Provider::gemini) {
                headers.emplace("x-goog-api-key", cfg_.api_key);
            } else {
                headers.emplace("Authorization", "Bearer " + cfg_.api_key);
            }
        }
        nlohmann::json body = payload;
        if (!cfg_.model.empty()) body["model"] = cfg_.model;
        const std::string wire = adapt_request(cfg_.provider, body).dump();

        auto res = cli.Post(url_.path, headers, wire, "application/json");
        if (!res) {
            const auto err = res.error();
            const std::string msg = "POST " + cfg_.endpoint + ": " + httplib::to_string(err);
            if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout) {
                throw TimeoutError(msg);
            }
            throw TransportError(msg);
        }
        if (res->status == 429 || res->status >= 500) {
            throw TransportError("POST " + cfg_.endpoint + ": HTTP " + std::to_string(res->status));
        }
        if (res->status < 200 || res->status >= 300) {
            throw std::runtime_error("POST " + cfg_.endpoint + ": HTTP " + std::to_string(res->status));
        }
        return adapt_response(cfg_.provider, res->body);
    }

private:
    HttpBackendConfig cfg_;
    SplitUrl url_;
};

}  // namespace gauge
