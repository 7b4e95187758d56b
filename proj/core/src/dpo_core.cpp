#include "medcritical/dpo_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace medcritical::dpo {

double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(xs.begin(), xs.end());
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x) {
    if (x >= 0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

std::vector<double> softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> out(logits.size());
    std::transform(logits.begin(), logits.end(), out.begin(), [&](double l) { return std::exp(l - lse); });
    return out;
}

namespace {

void check_index(const ToyPolicy& policy, std::size_t prompt_id, std::size_t completion_id) {
    if (prompt_id >= policy.prompts() || completion_id >= policy.completions()) {
        throw IndexOutOfRange("index (" + std::to_string(prompt_id) + ", " + std::to_string(completion_id) +
                              ") outside " + std::to_string(policy.prompts()) + "x" +
                              std::to_string(policy.completions()) + " policy");
    }
}

void check_pairs(const ToyPolicy& theta, const ToyPolicy& ref, const std::vector<ToyPair>& pairs) {
    if (!theta.same_shape(ref)) {
        throw ShapeMismatch("theta and ref shapes differ");
    }
    if (pairs.empty()) {
        throw EmptyData("no preference pairs");
    }
    for (const auto& p : pairs) {
        check_index(theta, p.prompt_id, p.chosen_id);
        check_index(theta, p.prompt_id, p.rejected_id);
        if (p.chosen_id == p.rejected_id) {
            throw IndexOutOfRange("pair with chosen == rejected");
        }
    }
}

}  // namespace

double policy_logprob(const ToyPolicy& policy, std::size_t prompt_id, std::size_t completion_id) {
    check_index(policy, prompt_id, completion_id);
    const auto row = policy.logits().row(prompt_id);
    return row[completion_id] - log_sum_exp(row);
}

double sft_nll(const ToyPolicy& policy, const std::vector<Observation>& data) {
    if (data.empty()) throw EmptyData("sft_nll: no observations");
    double total = 0.0;
    for (const auto& obs : data) total += policy_logprob(policy, obs.prompt_id, obs.completion_id);
    return -total / static_cast<double>(data.size());
}

Matrix sft_gradient(const ToyPolicy& policy, const std::vector<Observation>& data) {
    if (data.empty()) throw EmptyData("sft_gradient: no observations");
    Matrix grad(policy.prompts(), policy.completions());
    const double w = 1.0 / static_cast<double>(data.size());
    for (const auto& obs : data) {
        check_index(policy, obs.prompt_id, obs.completion_id);
        const auto probs = softmax(policy.logits().row(obs.prompt_id));
        for (std::size_t c = 0; c < probs.size(); ++c) {
            grad(obs.prompt_id, c) += w * (probs[c] - (c == obs.completion_id ? 1.0 : 0.0));
        }
    }
    return grad;
}

LossReport dpo_loss(const ToyPolicy& theta, const ToyPolicy& ref, const std::vector<ToyPair>& pairs, double beta) {
    check_pairs(theta, ref, pairs);
    LossReport report;
    report.margins.reserve(pairs.size());
    report.sigmas.reserve(pairs.size());
    double sum = 0.0;
    const auto& tl = theta.logits();
    const auto& rl = ref.logits();
    for (const auto& p : pairs) {
        // Chosen and rejected share a row, so the log-partitions cancel:
        // log pi(ch) - log pi(rej) == logit(ch) - logit(rej).
        const double theta_gap = tl(p.prompt_id, p.chosen_id) - tl(p.prompt_id, p.rejected_id);
        const double ref_gap = rl(p.prompt_id, p.chosen_id) - rl(p.prompt_id, p.rejected_id);
        const double margin = beta * (theta_gap - ref_gap);
        report.margins.push_back(margin);
        report.sigmas.push_back(sigmoid(margin));
        sum += log_sigmoid(margin);
    }
    report.loss = -sum / static_cast<double>(pairs.size());
    return report;
}

Matrix dpo_gradient(const ToyPolicy& theta, const ToyPolicy& ref, const std::vector<ToyPair>& pairs, double beta) {
    const auto report = dpo_loss(theta, ref, pairs, beta);
    Matrix grad(theta.prompts(), theta.completions());
    const double n = static_cast<double>(pairs.size());
    // The softmax terms of d log pi(chosen) and d log pi(rejected) cancel, so
    // each pair only moves its two logits.
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const double w = (1.0 - report.sigmas[i]) * beta / n;
        grad(p.prompt_id, p.chosen_id) -= w;
        grad(p.prompt_id, p.rejected_id) += w;
    }
    return grad;
}

Matrix finite_difference_gradient(const std::function<double(const ToyPolicy&)>& loss_fn, const ToyPolicy& theta,
                                  double epsilon) {
    if (!(epsilon >= 1e-8 && epsilon <= 1e-3)) {
        throw ConfigError("finite_difference_gradient: epsilon must be in [1e-8, 1e-3]");
    }
    Matrix grad(theta.prompts(), theta.completions());
    ToyPolicy probe = theta;
    auto values = probe.logits().values();
    auto out = grad.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + epsilon;
        const double up = loss_fn(probe);
        values[i] = saved - epsilon;
        const double down = loss_fn(probe);
        values[i] = saved;
        out[i] = (up - down) / (2.0 * epsilon);
    }
    return grad;
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeMismatch("max_relative_error: shapes differ");
    }
    double worst = 0.0;
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double scale = std::max({std::abs(av[i]), std::abs(bv[i]), floor});
        worst = std::max(worst, std::abs(av[i] - bv[i]) / scale);
    }
    return worst;
}

TrainResult train_toy_dpo(const ToyPolicy& theta0, const ToyPolicy& ref, const std::vector<ToyPair>& pairs,
                          const DpoConfig& config) {
    if (!(config.beta > 0) || !(config.learning_rate > 0)) {
        throw ConfigError("train_toy_dpo: beta and learning_rate must be > 0");
    }
    check_pairs(theta0, ref, pairs);
    TrainResult result{theta0, {}};
    result.history.reserve(config.steps);
    for (std::size_t step = 0; step < config.steps; ++step) {
        result.history.push_back(dpo_loss(result.policy, ref, pairs, config.beta));
        const auto grad = dpo_gradient(result.policy, ref, pairs, config.beta);
        auto values = result.policy.logits().values();
        const auto g = grad.values();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= config.learning_rate * g[i];
    }
    return result;
}

std::pair<ToyPolicy, std::vector<double>> train_toy_sft(const ToyPolicy& theta0, const std::vector<Observation>& data,
                                                        double learning_rate, std::size_t steps) {
    ToyPolicy policy = theta0;
    std::vector<double> history;
    history.reserve(steps);
    for (std::size_t step = 0; step < steps; ++step) {
        history.push_back(sft_nll(policy, data));
        const auto grad = sft_gradient(policy, data);
        auto values = policy.logits().values();
        const auto g = grad.values();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= learning_rate * g[i];
    }
    return {std::move(policy), std::move(history)};
}

}  // namespace medcritical::dpo
