#include "medcritical/gateway.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace medcritical {

using nlohmann::json;

std::string_view to_string(EndpointRole role) {
    switch (role) {
        case EndpointRole::Teacher: return "teacher";
        case EndpointRole::Student: return "student";
        case EndpointRole::Judge: return "judge";
    }
    return "unknown";
}

std::string_view to_string(FinishReason reason) {
    switch (reason) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        case FinishReason::Error: return "error";
    }
    return "error";
}

FinishReason finish_reason_from_string(std::string_view s) {
    if (s == "length") return FinishReason::Length;
    if (s == "error") return FinishReason::Error;
    return FinishReason::Stop;
}

std::string_view to_string(GatewayErrorKind kind) {
    switch (kind) {
        case GatewayErrorKind::EndpointUnreachable: return "EndpointUnreachable";
        case GatewayErrorKind::AuthFailure: return "AuthFailure";
        case GatewayErrorKind::EmptyResponse: return "EmptyResponse";
        case GatewayErrorKind::BadResponse: return "BadResponse";
    }
    return "GatewayError";
}

void EndpointConfig::validate() const {
    const std::string who = "endpoint '" + std::string(to_string(role)) + "': ";
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
        throw ConfigError(who + "base_url must start with http:// or https://");
    }
    if (model_id.empty()) throw ConfigError(who + "model_id is empty");
    if (!(timeout_seconds > 0)) throw ConfigError(who + "timeout must be > 0");
    if (max_retries < 0) throw ConfigError(who + "max_retries must be >= 0");
    if (!(rate_limit > 0)) throw ConfigError(who + "rate_limit must be > 0");
}

std::chrono::milliseconds RetryPolicy::delay(int retry, double u) const {
    double ms = static_cast<double>(base.count()) * std::pow(factor, retry);
    ms = std::min(ms, static_cast<double>(cap.count()));
    ms *= 1.0 + jitter * (2.0 * u - 1.0);
    ms = std::clamp(ms, 0.0, static_cast<double>(cap.count()));
    return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

RateLimiter::RateLimiter(double requests_per_second)
    : interval_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / requests_per_second))),
      next_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mu_);
        slot = std::max(next_, std::chrono::steady_clock::now());
        next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
}

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.origin = url;
    } else {
        out.origin = url.substr(0, path_start);
        out.prefix = url.substr(path_start);
    }
    while (!out.prefix.empty() && out.prefix.back() == '/') {
        out.prefix.pop_back();
    }
    return out;
}

enum class AttemptOutcome { Success, Retryable, Fatal };

struct Attempt {
    AttemptOutcome outcome = AttemptOutcome::Fatal;
    CompletionResult result;
    GatewayErrorKind error = GatewayErrorKind::BadResponse;
    std::string detail;
};

Attempt post_once(const EndpointConfig& endpoint, const CompletionRequest& request) {
    const auto url = split_url(endpoint.base_url);
    httplib::Client client(url.origin);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(endpoint.timeout_seconds));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    if (!endpoint.api_key_env.empty()) {
        if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }

    json body = {
        {"model", endpoint.model_id},
        {"messages", json::array({{{"role", "user"}, {"content", request.prompt.text}}})},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
        {"stream", false},
    };
    if (request.seed_hint) {
        body["seed"] = *request.seed_hint;
    }

    Attempt attempt;
    auto res = client.Post(url.prefix + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
        attempt.outcome = AttemptOutcome::Retryable;
        attempt.error = GatewayErrorKind::EndpointUnreachable;
        attempt.detail = "transport error: " + httplib::to_string(res.error());
        return attempt;
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
        attempt.outcome = AttemptOutcome::Fatal;
        attempt.error = GatewayErrorKind::AuthFailure;
        attempt.detail = "HTTP " + std::to_string(status);
        return attempt;
    }
    if (status == 429 || status == 408 || (status >= 500 && status < 600)) {
        attempt.outcome = AttemptOutcome::Retryable;
        attempt.error = GatewayErrorKind::EndpointUnreachable;
        attempt.detail = "HTTP " + std::to_string(status);
        return attempt;
    }
    if (status != 200) {
        attempt.outcome = AttemptOutcome::Fatal;
        attempt.error = GatewayErrorKind::BadResponse;
        attempt.detail = "HTTP " + std::to_string(status);
        return attempt;
    }

    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.is_object()) {
        attempt.outcome = AttemptOutcome::Fatal;
        attempt.error = GatewayErrorKind::BadResponse;
        attempt.detail = "response body is not a JSON object";
        return attempt;
    }
    std::string text;
    std::string finish = "stop";
    if (auto choices = reply.find("choices"); choices != reply.end() && choices->is_array() && !choices->empty()) {
        const auto& choice = (*choices)[0];
        if (auto msg = choice.find("message"); msg != choice.end() && msg->is_object()) {
            if (auto content = msg->find("content"); content != msg->end() && content->is_string()) {
                text = content->get<std::string>();
            }
        }
        if (auto fr = choice.find("finish_reason"); fr != choice.end() && fr->is_string()) {
            finish = fr->get<std::string>();
        }
    }
    if (text.empty()) {
        attempt.outcome = AttemptOutcome::Fatal;
        attempt.error = GatewayErrorKind::EmptyResponse;
        attempt.detail = "no completion text";
        return attempt;
    }
    attempt.outcome = AttemptOutcome::Success;
    attempt.result.text = std::move(text);
    attempt.result.finish_reason = finish_reason_from_string(finish);
    if (auto usage = reply.find("usage"); usage != reply.end() && usage->is_object()) {
        attempt.result.usage.prompt_tokens = usage->value("prompt_tokens", std::int64_t{0});
        attempt.result.usage.completion_tokens = usage->value("completion_tokens", std::int64_t{0});
    }
    return attempt;
}

}  // namespace

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)), rng_(options_.jitter_seed) {
    if (options_.cache_dir) {
        cache_.emplace(*options_.cache_dir);
    }
}

Gateway::~Gateway() = default;

RateLimiter& Gateway::limiter_for(const EndpointConfig& endpoint) {
    std::lock_guard lock(limiters_mu_);
    auto& slot = limiters_[endpoint.base_url + "|" + endpoint.model_id];
    if (!slot) {
        slot = std::make_unique<RateLimiter>(endpoint.rate_limit);
    }
    return *slot;
}

double Gateway::next_uniform() {
    std::lock_guard lock(rng_mu_);
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
}

CompletionResult Gateway::complete(const EndpointConfig& endpoint, const CompletionRequest& request) {
    endpoint.validate();
    const auto key = cache_key(endpoint, request);
    if (cache_) {
        if (auto hit = cache_->load(key)) {
            ++cache_hits_;
            return *hit;
        }
    }

    auto& limiter = limiter_for(endpoint);
    std::string last_detail;
    for (int attempt_no = 0; attempt_no <= endpoint.max_retries; ++attempt_no) {
        if (attempt_no > 0) {
            std::this_thread::sleep_for(options_.retry.delay(attempt_no - 1, next_uniform()));
        }
        limiter.acquire();
        ++network_calls_;
        auto attempt = post_once(endpoint, request);
        switch (attempt.outcome) {
            case AttemptOutcome::Success:
                attempt.result.attempts = attempt_no + 1;
                if (cache_) {
                    cache_->store(key, endpoint, request, attempt.result);
                }
                return attempt.result;
            case AttemptOutcome::Fatal:
                throw GatewayError(attempt.error, attempt.detail);
            case AttemptOutcome::Retryable:
                last_detail = attempt.detail;
                break;
        }
    }
    throw GatewayError(GatewayErrorKind::EndpointUnreachable,
                       "gave up after " + std::to_string(endpoint.max_retries + 1) + " attempts; last: " +
                           last_detail);
}

std::vector<CompletionResult> Gateway::complete_batch(const EndpointConfig& endpoint,
                                                      const std::vector<CompletionRequest>& requests,
                                                      int parallelism) {
    if (parallelism < 1) {
        throw ConfigError("parallelism must be >= 1");
    }
    endpoint.validate();
    std::vector<CompletionResult> results(requests.size());
    if (requests.empty()) {
        return results;
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
            try {
                results[i] = complete(endpoint, requests[i]);
            } catch (const GatewayError& e) {
                results[i].finish_reason = FinishReason::Error;
                results[i].error = e.kind();
                results[i].error_message = e.what();
            } catch (const std::exception& e) {
                results[i].finish_reason = FinishReason::Error;
                results[i].error = GatewayErrorKind::BadResponse;
                results[i].error_message = e.what();
            }
        }
    };

    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(parallelism), requests.size());
    {
        std::vector<std::jthread> threads;
        threads.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) {
            threads.emplace_back(worker);
        }
    }
    return results;
}

}  // namespace medcritical
