#include "medcritical/pipeline_config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <sstream>

#include "medcritical/digest.hpp"

namespace medcritical {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
    std::filesystem::path p(value);
    return p.is_relative() ? (base / p).lexically_normal() : p;
}

template <typename T>
void read_scalar(const YAML::Node& node, const char* key, T& out, const std::string& where) {
    if (!node || !node[key]) return;
    try {
        out = node[key].as<T>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

EndpointConfig read_endpoint(const YAML::Node& node, EndpointRole role) {
    auto ep = EndpointConfig::for_role(role);
    const std::string where = "endpoints." + std::string(to_string(role));
    if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
    read_scalar(node, "base_url", ep.base_url, where);
    read_scalar(node, "model", ep.model_id, where);
    read_scalar(node, "api_key_env", ep.api_key_env, where);
    read_scalar(node, "timeout", ep.timeout_seconds, where);
    read_scalar(node, "max_retries", ep.max_retries, where);
    read_scalar(node, "rate_limit", ep.rate_limit, where);
    if (node["api_key"]) {
        throw ConfigError(where + ": inline api_key is not allowed; name an environment variable in api_key_env");
    }
    return ep;
}

void read_decoding(const YAML::Node& node, const char* key, Decoding& d) {
    if (!node || !node[key]) return;
    const std::string where = std::string("decoding.") + key;
    read_scalar(node[key], "temperature", d.temperature, where);
    read_scalar(node[key], "max_tokens", d.max_tokens, where);
}

// Shortest text that reads back to the same double (0.7, not 0.69999...).
std::string shortest(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

YAML::Node endpoint_node(const EndpointConfig& ep) {
    YAML::Node n;
    n["base_url"] = ep.base_url;
    n["model"] = ep.model_id;
    n["api_key_env"] = ep.api_key_env;
    n["timeout"] = shortest(ep.timeout_seconds);
    n["max_retries"] = ep.max_retries;
    n["rate_limit"] = shortest(ep.rate_limit);
    return n;
}

YAML::Node decoding_node(const Decoding& d) {
    YAML::Node n;
    n["temperature"] = shortest(d.temperature);
    n["max_tokens"] = d.max_tokens;
    return n;
}

}  // namespace

std::string_view to_string(Stage2Split split) {
    switch (split) {
        case Stage2Split::Test: return "test";
        case Stage2Split::Train: return "train";
        case Stage2Split::All: return "all";
    }
    return "test";
}

PipelineConfig parse_pipeline_config(std::string_view yaml, const std::filesystem::path& base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(yaml));
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config is not valid YAML: ") + e.what());
    }
    if (root && !root.IsNull() && !root.IsMap()) {
        throw ConfigError("config root must be a mapping");
    }

    PipelineConfig cfg;
    std::string s;

    if (auto ds = root["dataset"]) {
        if (ds["questions"]) cfg.questions_path = resolve(base_dir, ds["questions"].as<std::string>());
        if (ds["format"]) cfg.questions_format = question_format_from_string(ds["format"].as<std::string>());
    }
    if (auto t = root["templates"]; t && t["manifest"]) {
        cfg.template_manifest = resolve(base_dir, t["manifest"].as<std::string>());
    }

    if (auto eps = root["endpoints"]) {
        if (eps["teacher"]) cfg.teacher = read_endpoint(eps["teacher"], EndpointRole::Teacher);
        if (eps["student"]) cfg.student = read_endpoint(eps["student"], EndpointRole::Student);
        if (auto j = eps["judge"]) {
            if (j.IsScalar()) {
                if (j.as<std::string>() != "teacher") {
                    throw ConfigError("endpoints.judge: only 'teacher' may be used as an alias");
                }
                cfg.judge_aliases_teacher = true;
            } else {
                cfg.judge = read_endpoint(j, EndpointRole::Judge);
                cfg.judge_aliases_teacher = false;
            }
        }
    }
    if (cfg.judge_aliases_teacher) {
        cfg.judge = cfg.teacher;
        cfg.judge.role = EndpointRole::Judge;
    }

    if (auto smp = root["sampling"]) {
        read_scalar(smp, "n", cfg.n, "sampling");
        read_scalar(smp, "parallelism", cfg.parallelism, "sampling");
        if (smp["stage2_split"]) {
            s = smp["stage2_split"].as<std::string>();
            if (s == "test") cfg.stage2_split = Stage2Split::Test;
            else if (s == "train") cfg.stage2_split = Stage2Split::Train;
            else if (s == "all") cfg.stage2_split = Stage2Split::All;
            else throw ConfigError("sampling.stage2_split: expected test|train|all");
        }
    }
    if (auto dec = root["decoding"]) {
        read_decoding(dec, "teacher", cfg.teacher_decoding);
        read_decoding(dec, "student", cfg.student_decoding);
        read_decoding(dec, "judge", cfg.judge_decoding);
        read_decoding(dec, "evaluate", cfg.eval_decoding);
    }
    if (auto sft = root["sft"]) {
        read_scalar(sft, "parse_retries", cfg.parse_retries, "sft");
        if (sft["free_text_match"]) {
            s = sft["free_text_match"].as<std::string>();
            if (s == "substring") cfg.free_text_match = FreeTextMatch::Substring;
            else if (s == "exact") cfg.free_text_match = FreeTextMatch::Exact;
            else throw ConfigError("sft.free_text_match: expected substring|exact");
        }
    }
    if (auto jd = root["judging"]) {
        bool strict = cfg.judge_mode == JudgeMode::Strict;
        read_scalar(jd, "strict", strict, "judging");
        cfg.judge_mode = strict ? JudgeMode::Strict : JudgeMode::Lenient;
        if (jd["input"]) {
            s = jd["input"].as<std::string>();
            if (s == "full") cfg.judge_input = JudgeInput::FullResponse;
            else if (s == "answer") cfg.judge_input = JudgeInput::AnswerOnly;
            else throw ConfigError("judging.input: expected full|answer");
        }
    }
    if (auto pr = root["pairing"]) {
        std::size_t cap = cfg.pairing.cap;
        read_scalar(pr, "cap", cap, "pairing");
        s = pr["strategy"] ? pr["strategy"].as<std::string>() : "cartesian_all";
        if (s == "cartesian_all") cfg.pairing = PairStrategy::cartesian();
        else if (s == "round_robin") cfg.pairing = PairStrategy::round_robin(cap);
        else throw ConfigError("pairing.strategy: expected cartesian_all|round_robin");
    }
    if (auto dpo = root["dpo"]) {
        read_scalar(dpo, "beta", cfg.beta, "dpo");
        read_scalar(dpo, "learning_rate", cfg.dpo_learning_rate, "dpo");
        read_scalar(dpo, "steps", cfg.dpo_steps, "dpo");
    }
    if (auto ev = root["evaluate"]) {
        if (ev["predictions"]) cfg.predictions_path = resolve(base_dir, ev["predictions"].as<std::string>());
        read_scalar(ev, "model_name", cfg.eval_model_name, "evaluate");
        read_scalar(ev, "base_model", cfg.eval_base_model, "evaluate");
        if (ev["endpoint"]) {
            s = ev["endpoint"].as<std::string>();
            if (s == "student") cfg.eval_endpoint = EndpointRole::Student;
            else if (s == "teacher") cfg.eval_endpoint = EndpointRole::Teacher;
            else if (s == "judge") cfg.eval_endpoint = EndpointRole::Judge;
            else throw ConfigError("evaluate.endpoint: expected student|teacher|judge");
        }
    }

    if (root["cache_dir"]) cfg.cache_dir = resolve(base_dir, root["cache_dir"].as<std::string>());
    else cfg.cache_dir = resolve(base_dir, cfg.cache_dir.string());
    if (root["output_dir"]) cfg.output_dir = resolve(base_dir, root["output_dir"].as<std::string>());
    else cfg.output_dir = resolve(base_dir, cfg.output_dir.string());
    read_scalar(root, "random_seed", cfg.random_seed, "root");
    read_scalar(root, "failure_threshold", cfg.failure_threshold, "root");
    return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_pipeline_config(text, std::filesystem::absolute(path).parent_path());
}

std::string dump_pipeline_config(const PipelineConfig& cfg) {
    YAML::Node root;
    root["dataset"]["questions"] = cfg.questions_path.string();
    root["dataset"]["format"] = cfg.questions_format == QuestionFormat::Jsonl ? "jsonl" : "csv";
    if (cfg.template_manifest) root["templates"]["manifest"] = cfg.template_manifest->string();
    root["endpoints"]["teacher"] = endpoint_node(cfg.teacher);
    root["endpoints"]["student"] = endpoint_node(cfg.student);
    if (cfg.judge_aliases_teacher) {
        root["endpoints"]["judge"] = "teacher";
    } else {
        root["endpoints"]["judge"] = endpoint_node(cfg.judge);
    }
    root["sampling"]["n"] = cfg.n;
    root["sampling"]["parallelism"] = cfg.parallelism;
    root["sampling"]["stage2_split"] = std::string(to_string(cfg.stage2_split));
    root["decoding"]["teacher"] = decoding_node(cfg.teacher_decoding);
    root["decoding"]["student"] = decoding_node(cfg.student_decoding);
    root["decoding"]["judge"] = decoding_node(cfg.judge_decoding);
    root["decoding"]["evaluate"] = decoding_node(cfg.eval_decoding);
    root["sft"]["parse_retries"] = cfg.parse_retries;
    root["sft"]["free_text_match"] = cfg.free_text_match == FreeTextMatch::Exact ? "exact" : "substring";
    root["judging"]["strict"] = cfg.judge_mode == JudgeMode::Strict;
    root["judging"]["input"] = cfg.judge_input == JudgeInput::FullResponse ? "full" : "answer";
    root["pairing"]["strategy"] =
        cfg.pairing.kind == PairStrategyKind::CartesianAll ? "cartesian_all" : "round_robin";
    root["pairing"]["cap"] = cfg.pairing.cap;
    root["dpo"]["beta"] = shortest(cfg.beta);
    root["dpo"]["learning_rate"] = shortest(cfg.dpo_learning_rate);
    root["dpo"]["steps"] = cfg.dpo_steps;
    if (cfg.predictions_path) root["evaluate"]["predictions"] = cfg.predictions_path->string();
    root["evaluate"]["model_name"] = cfg.eval_model_name;
    root["evaluate"]["base_model"] = cfg.eval_base_model;
    root["evaluate"]["endpoint"] = std::string(to_string(cfg.eval_endpoint));
    root["cache_dir"] = cfg.cache_dir.string();
    root["output_dir"] = cfg.output_dir.string();
    root["random_seed"] = cfg.random_seed;
    root["failure_threshold"] = shortest(cfg.failure_threshold);

    YAML::Emitter out;
    out << root;
    return std::string(out.c_str()) + "\n";
}

}  // namespace medcritical
