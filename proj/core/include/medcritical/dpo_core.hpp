#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "medcritical/error.hpp"

namespace medcritical::dpo {

class IndexOutOfRange : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class EmptyData : public Error {
public:
    using Error::Error;
};

// Dense prompts x completions matrix, row-major.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Categorical policy over C completions for each of P prompts:
// pi(c | p) = softmax(logits.row(p))[c].
class ToyPolicy {
public:
    ToyPolicy() = default;
    ToyPolicy(std::size_t prompts, std::size_t completions) : logits_(prompts, completions) {}
    explicit ToyPolicy(Matrix logits) : logits_(std::move(logits)) {}

    std::size_t prompts() const noexcept { return logits_.rows(); }
    std::size_t completions() const noexcept { return logits_.cols(); }
    Matrix& logits() noexcept { return logits_; }
    const Matrix& logits() const noexcept { return logits_; }

    bool same_shape(const ToyPolicy& other) const noexcept {
        return prompts() == other.prompts() && completions() == other.completions();
    }
    bool operator==(const ToyPolicy&) const = default;

private:
    Matrix logits_;
};

struct ToyPair {
    std::size_t prompt_id = 0;
    std::size_t chosen_id = 0;
    std::size_t rejected_id = 0;
};

struct Observation {
    std::size_t prompt_id = 0;
    std::size_t completion_id = 0;
};

struct DpoConfig {
    double beta = 0.1;
    double learning_rate = 0.5;
    std::size_t steps = 100;
};

struct LossReport {
    double loss = 0.0;
    std::vector<double> margins;  // beta * (delta_chosen - delta_rejected)
    std::vector<double> sigmas;   // sigmoid(margin)
};

// Numerically stable helpers.
double log_sum_exp(std::span<const double> xs);
double sigmoid(double x);
double log_sigmoid(double x);
std::vector<double> softmax(std::span<const double> logits);

double policy_logprob(const ToyPolicy& policy, std::size_t prompt_id, std::size_t completion_id);

// -(1/N) * sum log pi(c | p). Throws EmptyData, IndexOutOfRange.
double sft_nll(const ToyPolicy& policy, const std::vector<Observation>& data);
Matrix sft_gradient(const ToyPolicy& policy, const std::vector<Observation>& data);

// -(1/N) * sum log sigmoid(margin). Throws ShapeMismatch, EmptyData,
// IndexOutOfRange (also when chosen == rejected).
LossReport dpo_loss(const ToyPolicy& theta, const ToyPolicy& ref, const std::vector<ToyPair>& pairs, double beta);

// d loss / d theta.logits; ref is treated as constant.
Matrix dpo_gradient(const ToyPolicy& theta, const ToyPolicy& ref, const std::vector<ToyPair>& pairs, double beta);

// Central differences (L(x + eps) - L(x - eps)) / 2 eps per logit.
// eps must lie in [1e-8, 1e-3]; throws ConfigError otherwise.
Matrix finite_difference_gradient(const std::function<double(const ToyPolicy&)>& loss_fn, const ToyPolicy& theta,
                                  double epsilon);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor); floor guards entries that are
// (analytically) zero.
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8);

struct TrainResult {
    ToyPolicy policy;
    std::vector<LossReport> history;  // loss before each update
};

// Plain gradient descent on theta's logits; ref never changes.
TrainResult train_toy_dpo(const ToyPolicy& theta0, const ToyPolicy& ref, const std::vector<ToyPair>& pairs,
                          const DpoConfig& config);

// Gradient descent on sft_nll; returns the loss per step (before each update).
std::pair<ToyPolicy, std::vector<double>> train_toy_sft(const ToyPolicy& theta0, const std::vector<Observation>& data,
                                                        double learning_rate, std::size_t steps);

}  // namespace medcritical::dpo
