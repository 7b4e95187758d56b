#include <json.hpp>

#include "medcritical/digest.hpp"
#include "medcritical/gateway.hpp"

namespace medcritical {

using nlohmann::json;

std::string cache_key(const EndpointConfig& endpoint, const CompletionRequest& request) {
    // Object keys serialize sorted, so the dump is canonical.
    json material = {
        {"max_tokens", request.max_tokens},
        {"model", endpoint.model_id},
        {"prompt", request.prompt.text},
        {"sample_index", request.sample_index},
        {"temperature", request.temperature},
    };
    return sha256_hex(material.dump());
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) {
        throw IoError("cannot create cache directory " + dir_.string() + ": " + ec.message());
    }
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<CompletionResult> ResponseCache::load(const std::string& key) const {
    const auto path = path_for(key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) {
        return std::nullopt;
    }
    json record;
    try {
        record = json::parse(read_file(path));
    } catch (const std::exception&) {
        // A torn or foreign file is treated as a miss and overwritten later.
        return std::nullopt;
    }
    if (!record.contains("response") || record.value("key", "") != key) {
        return std::nullopt;
    }
    const auto& resp = record["response"];
    CompletionResult out;
    out.text = resp.at("text").get<std::string>();
    out.finish_reason = finish_reason_from_string(resp.value("finish_reason", "stop"));
    out.usage.prompt_tokens = resp.value("prompt_tokens", std::int64_t{0});
    out.usage.completion_tokens = resp.value("completion_tokens", std::int64_t{0});
    out.cached = true;
    return out;
}

void ResponseCache::store(const std::string& key, const EndpointConfig& endpoint,
                          const CompletionRequest& request, const CompletionResult& result) const {
    json record = {
        {"key", key},
        {"request",
         {{"model", endpoint.model_id},
          {"prompt", request.prompt.text},
          {"template", std::string(to_string(request.prompt.source_template))},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens},
          {"sample_index", request.sample_index}}},
        {"response",
         {{"text", result.text},
          {"finish_reason", std::string(to_string(result.finish_reason))},
          {"prompt_tokens", result.usage.prompt_tokens},
          {"completion_tokens", result.usage.completion_tokens}}},
    };
    write_file_atomic(path_for(key), record.dump(2) + "\n");
}

}  // namespace medcritical
