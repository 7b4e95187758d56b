#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "medcritical/error.hpp"
#include "medcritical/templates.hpp"

namespace medcritical {

enum class EndpointRole { Teacher, Student, Judge };

std::string_view to_string(EndpointRole role);

struct EndpointConfig {
    EndpointRole role = EndpointRole::Teacher;
    std::string base_url;  // e.g. http://127.0.0.1:8000/v1
    std::string model_id;
    std::string api_key_env;  // name of the env var holding the key; may be empty
    double timeout_seconds = 120.0;
    int max_retries = 3;
    double rate_limit = 5.0;  // requests per second

    // Throws ConfigError naming the first violated field.
    void validate() const;

    static EndpointConfig for_role(EndpointRole r) {
        EndpointConfig e;
        e.role = r;
        return e;
    }
};

struct CompletionRequest {
    PromptText prompt;
    double temperature = 0.0;
    int max_tokens = 1024;
    int sample_index = 0;
    std::optional<std::int64_t> seed_hint;
};

enum class FinishReason { Stop, Length, Error };

std::string_view to_string(FinishReason reason);
FinishReason finish_reason_from_string(std::string_view s);

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

enum class GatewayErrorKind { EndpointUnreachable, AuthFailure, EmptyResponse, BadResponse };

std::string_view to_string(GatewayErrorKind kind);

class GatewayError : public Error {
public:
    GatewayError(GatewayErrorKind kind, std::string detail)
        : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}
    GatewayErrorKind kind() const noexcept { return kind_; }

private:
    GatewayErrorKind kind_;
};

struct CompletionResult {
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    TokenUsage usage;
    bool cached = false;
    int attempts = 0;  // network attempts made for this call (0 on cache hit)

    // Set only on per-item failures inside complete_batch.
    std::optional<GatewayErrorKind> error;
    std::string error_message;

    bool ok() const noexcept { return !error.has_value(); }
};

// Hex SHA-256 over (model_id, prompt text, temperature, max_tokens,
// sample_index). base_url, api key, timestamps and seed_hint are excluded.
std::string cache_key(const EndpointConfig& endpoint, const CompletionRequest& request);

// Content-addressed store: <dir>/<key[0:2]>/<key>.json, one JSON record per
// key holding request metadata and the response. Writes are atomic renames,
// so concurrent writers of the same key are idempotent.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<CompletionResult> load(const std::string& key) const;
    void store(const std::string& key, const EndpointConfig& endpoint, const CompletionRequest& request,
               const CompletionResult& result) const;
    std::filesystem::path path_for(const std::string& key) const;
    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
};

struct RetryPolicy {
    std::chrono::milliseconds base{1000};
    double factor = 2.0;
    double jitter = 0.2;  // +/- fraction
    std::chrono::milliseconds cap{60000};

    // Delay before retry number `retry` (0-based), jitter drawn from u in [0,1).
    std::chrono::milliseconds delay(int retry, double u) const;
};

// Spaces request starts at least 1/rate apart; shared by every thread using
// the same endpoint.
class RateLimiter {
public:
    explicit RateLimiter(double requests_per_second);
    void acquire();

private:
    std::mutex mu_;
    std::chrono::steady_clock::duration interval_;
    std::chrono::steady_clock::time_point next_;
};

struct GatewayOptions {
    std::optional<std::filesystem::path> cache_dir;
    RetryPolicy retry;
    std::uint64_t jitter_seed = 0x6d656463ULL;
};

class Gateway {
public:
    explicit Gateway(GatewayOptions options = {});
    ~Gateway();
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    // Cache hit: returns the stored result with cached=true and no network
    // traffic. Miss: POSTs {base_url}/chat/completions, retrying 429/5xx and
    // transport failures up to max_retries. Throws GatewayError.
    CompletionResult complete(const EndpointConfig& endpoint, const CompletionRequest& request);

    // Results are positionally aligned with requests. Per-item failures are
    // reported in CompletionResult::error. Throws ConfigError when
    // parallelism < 1 or the endpoint is invalid.
    std::vector<CompletionResult> complete_batch(const EndpointConfig& endpoint,
                                                 const std::vector<CompletionRequest>& requests,
                                                 int parallelism);

    // Total HTTP attempts issued since construction.
    std::uint64_t network_calls() const noexcept { return network_calls_.load(); }
    std::uint64_t cache_hits() const noexcept { return cache_hits_.load(); }

private:
    RateLimiter& limiter_for(const EndpointConfig& endpoint);
    double next_uniform();

    GatewayOptions options_;
    std::optional<ResponseCache> cache_;
    std::mutex limiters_mu_;
    std::map<std::string, std::unique_ptr<RateLimiter>> limiters_;
    std::mutex rng_mu_;
    std::mt19937_64 rng_;
    std::atomic<std::uint64_t> network_calls_{0};
    std::atomic<std::uint64_t> cache_hits_{0};
};

}  // namespace medcritical
