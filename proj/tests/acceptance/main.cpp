// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "medcritical/digest.hpp"
#include "medcritical/dpo_core.hpp"
#include "medcritical/evaluator.hpp"
#include "medcritical/pair_builder.hpp"
#include "medcritical/pipeline.hpp"
#include "medcritical/tagged_response.hpp"
#include "mock_llm.hpp"
#include "scripted.hpp"
#include "tagged_gen.hpp"

using namespace medcritical;
using namespace medcritical::dpo;
using namespace std::chrono_literals;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool passed = true;
    std::ostringstream detail;
    std::vector<std::string> failures;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            failures.push_back(what);
            passed = false;
        }
    }
};

const double kLn2 = std::log(2.0);

ToyPolicy random_policy(std::size_t p, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    ToyPolicy out(p, c);
    for (auto& x : out.logits().values()) x = u(rng);
    return out;
}

std::vector<ToyPair> random_pairs(std::size_t p, std::size_t c, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> count(1, 8), prompt(0, p - 1), completion(0, c - 1);
    std::vector<ToyPair> out(count(rng));
    for (auto& pair : out) {
        pair.prompt_id = prompt(rng);
        pair.chosen_id = completion(rng);
        do pair.rejected_id = completion(rng);
        while (pair.rejected_id == pair.chosen_id);
    }
    return out;
}

void loss_identities(Outcome& v) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> P(1, 4), C(2, 8);
    double worst_same = 0, worst_beta0 = 0;
    for (int i = 0; i < 50; ++i) {
        const auto p = P(rng), c = C(rng);
        const auto theta = random_policy(p, c, rng);
        const auto ref = random_policy(p, c, rng);
        const auto pairs = random_pairs(p, c, rng);
        worst_same = std::max(worst_same, std::abs(dpo_loss(theta, theta, pairs, 0.5).loss - kLn2));
        worst_beta0 = std::max(worst_beta0, std::abs(dpo_loss(theta, ref, pairs, 0.0).loss - kLn2));
    }
    v.require(worst_same <= 1e-12, "theta==ref deviates by " + std::to_string(worst_same));
    v.require(worst_beta0 <= 1e-12, "beta=0 deviates by " + std::to_string(worst_beta0));
    v.detail << "50 instances, max |loss - ln2| = " << std::max(worst_same, worst_beta0);
}

void closed_form(Outcome& v) {
    ToyPolicy theta(1, 2), ref(1, 2);
    theta.logits()(0, 0) = std::log(0.7);
    theta.logits()(0, 1) = std::log(0.3);
    const double loss = dpo_loss(theta, ref, {{0, 0, 1}}, 1.0).loss;
    const double err = std::abs(loss + std::log(0.7));
    v.require(err <= 1e-10, "loss " + std::to_string(loss));
    v.detail << "loss = " << loss << ", |err| = " << err;
}

void gradient_oracle(Outcome& v) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> P(1, 4), C(2, 8);
    const double betas[] = {0.1, 0.5, 1.0};
    double worst = 0;
    for (int i = 0; i < 120; ++i) {
        const auto p = P(rng), c = C(rng);
        const auto theta = random_policy(p, c, rng);
        const auto ref = random_policy(p, c, rng);
        const auto pairs = random_pairs(p, c, rng);
        const double beta = betas[i % 3];
        const auto analytic = dpo_gradient(theta, ref, pairs, beta);
        const auto fd = finite_difference_gradient(
            [&](const ToyPolicy& t) { return dpo_loss(t, ref, pairs, beta).loss; }, theta, 1e-5);
        worst = std::max(worst, max_relative_error(analytic, fd));
    }
    v.require(worst < 1e-6, "max relative error " + std::to_string(worst));
    v.detail << "120 instances, max relative error = " << worst;
}

void training_dynamics(Outcome& v) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> P(1, 4), C(2, 8);
    double min_sigma = 1.0;
    for (int run = 0; run < 10; ++run) {
        const auto p = P(rng), c = C(rng);
        const auto theta0 = random_policy(p, c, rng);
        std::vector<ToyPair> pairs;
        for (std::size_t prompt = 0; prompt < p; ++prompt) {
            const auto best = std::uniform_int_distribution<std::size_t>(0, c - 1)(rng);
            for (std::size_t other = 0; other < c; ++other) {
                if (other != best) pairs.push_back({prompt, best, other});
            }
        }
        const auto res = train_toy_dpo(theta0, theta0, pairs, {1.0, 0.5, 200});
        for (std::size_t i = 1; i < res.history.size(); ++i) {
            if (res.history[i].loss > res.history[i - 1].loss + 1e-12) {
                v.require(false, "loss increased at step " + std::to_string(i) + " of run " + std::to_string(run));
                break;
            }
        }
        for (double s : dpo_loss(res.policy, theta0, pairs, 1.0).sigmas) min_sigma = std::min(min_sigma, s);
    }
    v.require(min_sigma > 0.9, "min sigma " + std::to_string(min_sigma));

    ToyPolicy flat(1, 2);
    const auto conflicting = train_toy_dpo(flat, flat, {{0, 0, 1}, {0, 1, 0}}, {1.0, 0.5, 200});
    double drift = 0;
    for (const auto& h : conflicting.history) drift = std::max(drift, std::abs(h.loss - kLn2));
    drift = std::max(drift, std::abs(dpo_loss(conflicting.policy, flat, {{0, 0, 1}, {0, 1, 0}}, 1.0).loss - kLn2));
    v.require(drift <= 1e-9, "conflicting pairs drift " + std::to_string(drift));
    v.detail << "10 runs, min final sigma = " << min_sigma << ", conflicting drift = " << drift;
}

// ---- end-to-end fixture run, shared by criteria 5 and 9 ---------------------

struct E2E {
    mctest::Script script;
    mctest::MockLlm teacher{[this](const mctest::MockRequest& r, int) { return script.teacher_or_judge(r); }};
    mctest::MockLlm student{[this](const mctest::MockRequest& r, int) { return script.student(r); }};
    fs::path work = mctest::scratch_dir("acceptance-e2e");
    PipelineConfig cfg = mctest::fixture_config(work, teacher.base_url(), student.base_url());
    std::vector<mctest::MockRequest> teacher_log, student_log;
    bool ran = false;
};

E2E& e2e() {
    static E2E rig;
    return rig;
}

RunOptions fast_retry() {
    RunOptions o;
    o.retry.base = 1ms;
    o.retry.cap = 2ms;
    return o;
}

std::vector<json> jsonl(const fs::path& p) {
    std::vector<json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

const Stage kNetworkStages[] = {Stage::BuildSft, Stage::Generate, Stage::Judge, Stage::MakePairs};

void end_to_end(Outcome& v) {
    auto& rig = e2e();
    const auto& out = rig.cfg.output_dir;
    std::map<std::string, std::map<std::string, std::string>> digests;
    for (auto stage : kNetworkStages) {
        const auto r = run_stage(rig.cfg, stage, fast_retry());
        v.require(r.exit_code == 0, std::string(to_string(stage)) + " exit " + std::to_string(r.exit_code) + " " +
                                        r.error);
        if (r.manifest) digests[std::string(to_string(stage))] = r.manifest->output_digests;
    }
    rig.teacher_log = rig.teacher.requests();
    rig.student_log = rig.student.requests();
    rig.ran = true;
    if (!v.passed) return;

    const std::size_t expected_records = rig.script.questions.size() - rig.script.teacher_mismatch.size();
    const auto records = jsonl(out / "sft_train.jsonl").size();
    v.require(records == expected_records,
              "sft records " + std::to_string(records) + " != " + std::to_string(expected_records));

    // Verdicts against the script, sample by sample.
    std::size_t verdict_mismatch = 0, judged = 0;
    for (const auto& row : jsonl(out / "judgments.jsonl")) {
        ++judged;
        const bool scripted = rig.script.student_correct(row["id"], row["sample_index"].get<int>());
        if (row["verdict"] != (scripted ? "correct" : "incorrect")) ++verdict_mismatch;
    }
    std::size_t expected_judged = 0, expected_pairs = 0;
    for (const auto* q : rig.script.test_questions()) {
        std::size_t pos = 0, neg = 0;
        for (int i = 0; i < rig.cfg.n; ++i) {
            if (rig.script.student_unparseable.count({q->id, i})) continue;
            ++expected_judged;
            (rig.script.student_correct(q->id, i) ? pos : neg)++;
        }
        expected_pairs += pos * neg;
    }
    v.require(verdict_mismatch == 0, std::to_string(verdict_mismatch) + " verdicts differ from the script");
    v.require(judged == expected_judged, "judged " + std::to_string(judged));
    const auto pairs = jsonl(out / "pairs.jsonl").size();
    v.require(pairs == expected_pairs,
              "pairs " + std::to_string(pairs) + " != " + std::to_string(expected_pairs));

    const auto hits_before = rig.teacher.hits() + rig.student.hits();
    double calls = 0;
    for (auto stage : kNetworkStages) {
        const auto r = run_stage(rig.cfg, stage, fast_retry());
        const auto name = std::string(to_string(stage));
        v.require(r.exit_code == 0, "warm " + name + " exit " + std::to_string(r.exit_code));
        if (!r.manifest) continue;
        if (auto it = r.manifest->counts.find("network_calls"); it != r.manifest->counts.end()) calls += it->second;
        v.require(r.manifest->output_digests == digests[name], "warm " + name + " digests differ");
    }
    v.require(calls == 0, "warm rerun made " + std::to_string(calls) + " network calls");
    v.require(rig.teacher.hits() + rig.student.hits() == hits_before, "mock servers saw warm-run traffic");
    v.detail << records << " sft records, " << judged << " verdicts as scripted, " << pairs
             << " pairs, warm rerun network calls = " << calls;
}

struct TableRow {
    const char* model;
    double train, test, published;
};

void table_arithmetic(Outcome& v) {
    const TableRow rows[] = {{"MedCritical", 68.17, 71.29, 70.62},
                             {"Student", 47.57, 52.81, 51.68},
                             {"Teacher", 59.07, 67.52, 65.37}};
    bool first = true;
    for (const auto& r : rows) {
        const double total = round_2dp(combine_split_accuracies({{3000, r.train}, {10887, r.test}}));
        const double diff = std::abs(total - r.published);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s %.2f vs %.2f", r.model, total, r.published);
        v.require(diff <= 0.05 + 1e-9, std::string(buf) + " (off by " + std::to_string(diff) + ")");
        v.detail << (first ? "" : "; ") << buf;
        first = false;
    }
}

void judge_protocol(Outcome& v) {
    const std::vector<std::string> adversarial = {
        "correct", "Correct", "incorrect", "1.", "2.", "option 2", "option 1", "", " ", "\n",
        "12", "21", "1 2", "one", "yes", "The answer is correct.", "(1)", "\"1\"", "I", "1\n2"};
    mctest::MockLlm judge([&](const mctest::MockRequest& r, int) {
        const auto pos = r.prompt.find("case-");
        const int idx = pos == std::string::npos ? -1 : std::stoi(r.prompt.substr(pos + 5));
        if (idx == 100) return mctest::MockReply::text(" 1 ");
        if (idx == 101) return mctest::MockReply::text("\t2\n");
        return mctest::MockReply::text(adversarial.at(static_cast<std::size_t>(idx)));
    });
    auto ep = EndpointConfig::for_role(EndpointRole::Judge);
    ep.base_url = judge.base_url();
    ep.model_id = "judge";
    ep.rate_limit = 1000;
    ep.max_retries = 0;
    GatewayOptions go;
    go.retry.base = 1ms;
    go.retry.cap = 2ms;
    Gateway gw(go);
    const Question q{"j", "Which vector transmits malaria", {}, "Anopheles mosquito", Split::Test};
    const auto& tmpl = default_template(TemplateKind::Judge);
    auto sample_for = [&](int idx) {
        StudentSample s;
        s.question_id = "j";
        s.sample_index = idx;
        s.raw_text = serialize_tagged("r", "case-" + std::to_string(idx));
        s.response = parse_tagged_response(s.raw_text);
        return s;
    };

    v.require(judge_answer(q, sample_for(100), gw, ep, tmpl).verdict == Verdict::Correct, "' 1 ' not Correct");
    v.require(judge_answer(q, sample_for(101), gw, ep, tmpl).verdict == Verdict::Incorrect, "'\\t2\\n' not Incorrect");
    std::size_t rejected = 0;
    for (std::size_t i = 0; i < adversarial.size(); ++i) {
        try {
            judge_answer(q, sample_for(static_cast<int>(i)), gw, ep, tmpl);
            v.require(false, "accepted '" + adversarial[i] + "'");
        } catch (const JudgeOutputUnparseable&) {
            ++rejected;
        }
    }
    v.detail << "accepted 1/2 after trim, rejected " << rejected << "/" << adversarial.size() << " adversarial outputs";
}

void parser_properties(Outcome& v) {
    std::mt19937_64 rng(20240501);
    std::size_t round_trips = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto [think, answer] = mctest::random_pair(rng);
        const auto text = serialize_tagged(think, answer);
        const auto r = try_parse_tagged_response(text);
        if (r && r->think == think && r->answer == answer && serialize_tagged(*r) == text) ++round_trips;
    }
    std::mt19937_64 mrng(977);
    std::size_t rejected = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto [think, answer] = mctest::random_pair(mrng);
        if (!try_parse_tagged_response(mctest::mutate(mrng, think, answer))) ++rejected;
    }
    v.require(round_trips == 1000, std::to_string(1000 - round_trips) + " round-trip failures");
    v.require(rejected == 1000, std::to_string(1000 - rejected) + " malformed variants accepted");
    v.detail << round_trips << "/1000 round-trips, " << rejected << "/1000 malformed rejected";
}

void no_leak(Outcome& v) {
    auto& rig = e2e();
    if (!rig.ran) {
        v.require(false, "end-to-end run did not happen");
        return;
    }
    const auto& script = rig.script;
    auto leaks = [&](const std::string& prompt, const Question& q) {
        if (prompt.find(std::string(kAnswerHintPrefix)) != std::string::npos) return true;
        return answer_is_distinctive(q) && prompt.find(q.reference_answer) != std::string::npos;
    };

    std::size_t stage2 = 0, leaked = 0;
    for (const auto& req : rig.student_log) {
        const auto* q = script.find(req.prompt);
        ++stage2;
        if (!q || leaks(req.prompt, *q)) ++leaked;
    }
    for (const auto& pair : jsonl(rig.cfg.output_dir / "pairs.jsonl")) {
        const std::string prompt = pair["prompt"];
        const auto* q = script.find(prompt);
        ++stage2;
        if (!q || leaks(prompt, *q)) ++leaked;
    }
    // Any distinctive reference answer, not only the prompt's own.
    for (const auto& req : rig.student_log) {
        for (const auto& q : script.questions) {
            if (answer_is_distinctive(q) && req.prompt.find(q.reference_answer) != std::string::npos) ++leaked;
        }
    }

    std::size_t teacher_prompts = 0, missing_hint = 0;
    for (const auto& req : rig.teacher_log) {
        if (req.prompt.find("Candidate answer:") != std::string::npos) continue;  // judge traffic
        ++teacher_prompts;
        const auto* q = script.find(req.prompt);
        if (!q || req.prompt.find(std::string(kAnswerHintPrefix) + q->reference_answer) == std::string::npos) {
            ++missing_hint;
        }
    }
    v.require(stage2 > 0 && leaked == 0, std::to_string(leaked) + " stage-2 prompts reveal a reference answer");
    v.require(teacher_prompts > 0 && missing_hint == 0,
              std::to_string(missing_hint) + " teacher prompts lack the reference answer");
    v.detail << stage2 << " stage-2 prompts clean, " << teacher_prompts - missing_hint << "/" << teacher_prompts
             << " teacher prompts carry the answer";
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<void(Outcome&)> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "dpo loss identities", 1, loss_identities},
        {2, "closed-form pair", 1, closed_form},
        {3, "gradient vs finite differences", 10, gradient_oracle},
        {4, "toy preference dynamics", 5, training_dynamics},
        {5, "end-to-end pipeline with warm rerun", 30, end_to_end},
        {6, "table arithmetic", 1, table_arithmetic},
        {7, "judge protocol", 1, judge_protocol},
        {8, "parser properties", 5, parser_properties},
        {9, "no-leak audit", 5, no_leak},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        Outcome v;
        const auto start = std::chrono::steady_clock::now();
        try {
            c.run(v);
        } catch (const std::exception& e) {
            v.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char budget[96];
        std::snprintf(budget, sizeof budget, "runtime %.3fs exceeds %.0fs", secs, c.budget_seconds);
        v.require(secs < c.budget_seconds, budget);
        std::string line = v.detail.str();
        for (std::size_t i = 0; i < v.failures.size(); ++i) line += (i == 0 ? " | failed: " : "; ") + v.failures[i];
        std::printf("%s  [%d] %s (%.3fs): %s\n", v.passed ? "PASS" : "FAIL", c.id, c.name, secs, line.c_str());
        std::fflush(stdout);
        if (!v.passed) ++failures;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
