#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <set>

#include "medcritical/digest.hpp"
#include "medcritical/pair_builder.hpp"
#include "mock_llm.hpp"
#include "scripted.hpp"

using namespace medcritical;
using namespace std::chrono_literals;

namespace {

EndpointConfig at(const std::string& url, EndpointRole role, const std::string& model) {
    auto ep = EndpointConfig::for_role(role);
    ep.base_url = url;
    ep.model_id = model;
    ep.rate_limit = 1000;
    ep.max_retries = 0;
    return ep;
}

Gateway fast_gateway() {
    GatewayOptions o;
    o.retry.base = 1ms;
    o.retry.cap = 2ms;
    return Gateway(o);
}

Question free_q() {
    return {"f1", "Which vector transmits malaria", {}, "Anopheles mosquito", Split::Test};
}

StudentSample sample(int idx, bool parseable = true) {
    StudentSample s;
    s.question_id = "f1";
    s.sample_index = idx;
    s.raw_text = parseable ? serialize_tagged("t" + std::to_string(idx), "a" + std::to_string(idx)) : "prose";
    if (parseable) s.response = parse_tagged_response(s.raw_text);
    return s;
}

std::vector<StudentSample> samples(int n, int unparseable = -1) {
    std::vector<StudentSample> out;
    for (int i = 0; i < n; ++i) out.push_back(sample(i, i != unparseable));
    return out;
}

std::vector<Judgment> verdicts(const std::vector<std::pair<int, Verdict>>& v) {
    std::vector<Judgment> out;
    for (auto [i, verdict] : v) out.push_back({"f1", i, verdict, verdict == Verdict::Correct ? "1" : "2", "judge"});
    return out;
}

constexpr auto C = Verdict::Correct;
constexpr auto I = Verdict::Incorrect;

CorErrRecord record_with(std::size_t pos, std::size_t neg) {
    CorErrRecord r;
    r.question_id = "f1";
    int idx = 0;
    for (std::size_t i = 0; i < pos; ++i) r.correct.push_back(sample(idx++));
    for (std::size_t i = 0; i < neg; ++i) r.incorrect.push_back(sample(idx++));
    return r;
}

}  // namespace

TEST_SUITE("pair_builder") {
    TEST_CASE("strict verdict rule") {
        CHECK(parse_verdict("1") == Verdict::Correct);
        CHECK(parse_verdict(" 2\n") == Verdict::Incorrect);
        CHECK(parse_verdict("\t1  ") == Verdict::Correct);
        for (const char* bad : {"", " ", "correct", "1.", "option 2", "12", "The answer is correct.", "I", "one"}) {
            CAPTURE(bad);
            CHECK_FALSE(parse_verdict(bad).has_value());
        }
    }

    TEST_CASE("student sampling: 4 distinct outputs, indices 0-3, seeds offset") {
        mctest::MockLlm mock([](const mctest::MockRequest& r, int) {
            return mctest::MockReply::text(serialize_tagged("s", "seed " + std::to_string(*r.seed)));
        });
        auto gw = fast_gateway();
        StudentOptions opts;
        opts.seed_base = 100;
        const auto out = sample_student_answers(free_q(), 4, gw, at(mock.base_url(), EndpointRole::Student, "stu"),
                                                default_template(TemplateKind::StudentCot), opts);
        REQUIRE(out.size() == 4);
        std::set<std::string> answers;
        for (int i = 0; i < 4; ++i) {
            CHECK(out[i].sample_index == i);
            REQUIRE(out[i].parseable());
            answers.insert(out[i].response->answer);
        }
        CHECK(answers.size() == 4);
        CHECK(answers.count("seed 103") == 1);
        CHECK(mock.hits() == 4);
        for (const auto& r : mock.requests()) {
            CHECK(r.prompt.find("Anopheles") == std::string::npos);
            CHECK(r.temperature == doctest::Approx(0.9));
        }
    }

    TEST_CASE("n below 2 is a precondition violation") {
        auto gw = fast_gateway();
        CHECK_THROWS_AS(sample_student_answers(free_q(), 1, gw, at("http://127.0.0.1:1/v1", EndpointRole::Student, "s"),
                                               default_template(TemplateKind::StudentCot)),
                        PreconditionError);
    }

    TEST_CASE("untagged output for one index is flagged, others parse") {
        mctest::MockLlm mock([](const mctest::MockRequest& r, int) {
            return *r.seed == 2 ? mctest::MockReply::text("no tags here")
                                : mctest::MockReply::text(serialize_tagged("s", "x"));
        });
        auto gw = fast_gateway();
        StudentOptions opts;
        opts.seed_base = 0;
        const auto out = sample_student_answers(free_q(), 4, gw, at(mock.base_url(), EndpointRole::Student, "s"),
                                                default_template(TemplateKind::StudentCot), opts);
        CHECK(out[0].parseable());
        CHECK(out[1].parseable());
        CHECK_FALSE(out[2].parseable());
        CHECK_FALSE(out[2].error.empty());
        CHECK(out[3].parseable());
    }

    TEST_CASE("student prompt must not reveal the reference answer") {
        auto leaky = free_q();
        leaky.text = "Is the Anopheles mosquito the vector of malaria";
        CHECK_THROWS_AS(render_student_prompt(leaky, default_template(TemplateKind::StudentCot)), PreconditionError);
        CHECK_NOTHROW(render_student_prompt(free_q(), default_template(TemplateKind::StudentCot)));
        Question mcq{"m", "Pick", {{"A", "x"}, {"B", "y"}}, "B", Split::Test};
        CHECK_FALSE(answer_is_distinctive(mcq));
        CHECK(answer_is_distinctive(free_q()));
        CHECK_NOTHROW(render_student_prompt(mcq, default_template(TemplateKind::StudentCot)));
    }

    TEST_CASE("judge verdicts, whitespace, strict and lenient modes") {
        int calls = 0;
        mctest::MockLlm mock([&](const mctest::MockRequest& r, int) {
            ++calls;
            if (r.prompt.find("a0") != std::string::npos) return mctest::MockReply::text("1");
            if (r.prompt.find("a1") != std::string::npos) return mctest::MockReply::text(" 2\n");
            if (r.prompt.find(kJudgeFormatReminder) != std::string::npos) return mctest::MockReply::text("2");
            return mctest::MockReply::text("The answer is correct.");
        });
        auto gw = fast_gateway();
        const auto judge = at(mock.base_url(), EndpointRole::Judge, "judge-model");
        const auto& tmpl = default_template(TemplateKind::Judge);
        const auto q = free_q();

        auto j0 = judge_answer(q, sample(0), gw, judge, tmpl);
        CHECK(j0.verdict == Verdict::Correct);
        CHECK(j0.raw_judge_output == "1");
        CHECK(j0.judge_model == "judge-model");
        CHECK(judge_answer(q, sample(1), gw, judge, tmpl).verdict == Verdict::Incorrect);

        try {
            judge_answer(q, sample(2), gw, judge, tmpl);
            FAIL("expected JudgeOutputUnparseable");
        } catch (const JudgeOutputUnparseable& e) {
            CHECK(e.raw() == "The answer is correct.");
        }

        JudgeOptions lenient;
        lenient.mode = JudgeMode::Lenient;
        CHECK(judge_answer(q, sample(3), gw, judge, tmpl, lenient).verdict == Verdict::Incorrect);
        CHECK_THROWS_AS(judge_answer(q, sample(4, false), gw, judge, tmpl), PreconditionError);

        const auto temps = mock.requests();
        for (const auto& r : temps) {
            CHECK(r.temperature == 0.0);
            CHECK(r.max_tokens == 4);
        }
    }

    TEST_CASE("an empty judge reply is unparseable, not a transport error") {
        mctest::MockLlm mock([](const mctest::MockRequest&, int) { return mctest::MockReply::text(""); });
        auto gw = fast_gateway();
        const auto judge = at(mock.base_url(), EndpointRole::Judge, "judge-model");
        const auto& tmpl = default_template(TemplateKind::Judge);
        CHECK_THROWS_AS(judge_answer(free_q(), sample(0), gw, judge, tmpl), JudgeOutputUnparseable);
        const auto outcomes = judge_samples({free_q()}, samples(2), gw, judge, tmpl);
        for (const auto& o : outcomes) {
            CHECK_FALSE(o.judgment.has_value());
            CHECK(o.error.find("JudgeOutputUnparseable") != std::string::npos);
        }
    }

    TEST_CASE("judge input: full response or answer only") {
        const auto s = sample(0);
        const auto full = render_judge_prompt(free_q(), s, default_template(TemplateKind::Judge),
                                              JudgeInput::FullResponse);
        const auto answer_only = render_judge_prompt(free_q(), s, default_template(TemplateKind::Judge),
                                                     JudgeInput::AnswerOnly);
        CHECK(full.text.find("<think>t0</think>") != std::string::npos);
        CHECK(answer_only.text.find("<think>") == std::string::npos);
        CHECK(answer_only.text.find("a0") != std::string::npos);
        CHECK(full.text.find("Question: Which vector transmits malaria?\n") != std::string::npos);
    }

    TEST_CASE("partition examples") {
        const auto q = free_q();
        auto r = build_cor_err_record(q, samples(4), verdicts({{0, C}, {1, I}, {2, C}, {3, I}}));
        CHECK(r.correct.size() == 2);
        CHECK(r.incorrect.size() == 2);
        CHECK(r.excluded == 0);

        r = build_cor_err_record(q, samples(4), verdicts({{0, C}, {1, C}, {2, C}, {3, C}}));
        CHECK(r.correct.size() == 4);
        CHECK(r.incorrect.empty());
        CHECK(make_preference_pairs(r, PairStrategy::cartesian(), "p").empty());

        r = build_cor_err_record(q, samples(4, 1), verdicts({{0, C}, {2, I}, {3, I}}));
        CHECK(r.correct.size() == 1);
        CHECK(r.incorrect.size() == 2);
        CHECK(r.excluded == 1);
    }

    TEST_CASE("missing, duplicate and failed judgments") {
        const auto q = free_q();
        try {
            build_cor_err_record(q, samples(3), verdicts({{0, C}, {2, I}}));
            FAIL("expected MissingJudgment");
        } catch (const MissingJudgment& e) {
            CHECK(e.sample_index() == 1);
        }
        CHECK_THROWS_AS(build_cor_err_record(q, samples(2), verdicts({{0, C}, {0, I}, {1, I}})), Error);
        const auto r = build_cor_err_record(q, samples(3), verdicts({{0, C}, {2, I}}), {1});
        CHECK(r.excluded == 1);
        CHECK(r.correct.size() + r.incorrect.size() + r.excluded == 3);
    }

    TEST_CASE("cartesian counts") {
        CHECK(make_preference_pairs(record_with(2, 2), PairStrategy::cartesian(), "p").size() == 4);
        CHECK(make_preference_pairs(record_with(0, 4), PairStrategy::cartesian(), "p").empty());
        CHECK(make_preference_pairs(record_with(3, 1), PairStrategy::cartesian(), "p").size() == 3);
    }

    TEST_CASE("capped round robin order") {
        const auto rec = record_with(3, 1);
        const auto pairs = make_preference_pairs(rec, PairStrategy::round_robin(2), "p");
        REQUIRE(pairs.size() == 2);
        CHECK(pairs[0].chosen == serialize_tagged(*rec.correct[0].response));
        CHECK(pairs[0].rejected == serialize_tagged(*rec.incorrect[0].response));
        CHECK(pairs[1].chosen == serialize_tagged(*rec.correct[1].response));
        CHECK(pairs[1].rejected == serialize_tagged(*rec.incorrect[0].response));
    }

    TEST_CASE("round robin never repeats and is capped by the product") {
        for (std::size_t pos = 1; pos <= 4; ++pos) {
            for (std::size_t neg = 1; neg <= 4; ++neg) {
                for (std::size_t cap = 1; cap <= 20; ++cap) {
                    const auto pairs = make_preference_pairs(record_with(pos, neg), PairStrategy::round_robin(cap), "p");
                    CHECK(pairs.size() == std::min(cap, pos * neg));
                    std::set<std::pair<int, int>> seen;
                    for (const auto& p : pairs) seen.insert({p.chosen_index, p.rejected_index});
                    CHECK(seen.size() == pairs.size());
                }
            }
        }
    }

    TEST_CASE("pairs come from the right sets") {
        const auto q = free_q();
        const auto judgments = verdicts({{0, C}, {1, I}, {2, C}, {3, I}});
        const auto rec = build_cor_err_record(q, samples(4), judgments);
        for (const auto& p : make_preference_pairs(rec, PairStrategy::cartesian(), "prompt")) {
            CHECK(p.question_id == "f1");
            CHECK(p.prompt == "prompt");
            CHECK(judgments[p.chosen_index].verdict == Verdict::Correct);
            CHECK(judgments[p.rejected_index].verdict == Verdict::Incorrect);
        }
    }

    TEST_CASE("export ordering, determinism, empty file, round trip") {
        const auto dir = mctest::scratch_dir("pairs-export");
        auto pairs = make_preference_pairs(record_with(2, 2), PairStrategy::cartesian(), "p");
        std::reverse(pairs.begin(), pairs.end());
        const auto s1 = export_preference_pairs(pairs, dir / "a.jsonl");
        CHECK(s1.count == 4);
        const auto body = read_file(dir / "a.jsonl");
        CHECK(std::count(body.begin(), body.end(), '\n') == 4);
        CHECK(body.find("\"chosen\":\"<think>t0</think>\\n<answer>a0</answer>\",\"rejected\":\"<think>t2") !=
              std::string::npos);
        CHECK(export_preference_pairs(pairs, dir / "b.jsonl").digest == s1.digest);

        const auto back = import_preference_pairs(dir / "a.jsonl");
        CHECK(back.size() == 4);
        CHECK(export_preference_pairs(back, dir / "c.jsonl").digest == s1.digest);

        const auto empty = export_preference_pairs({}, dir / "empty.jsonl");
        CHECK(empty.count == 0);
        CHECK(read_file(dir / "empty.jsonl").empty());
    }

    TEST_CASE("cor_err jsonl shape") {
        const auto rec = build_cor_err_record(free_q(), samples(3, 2), verdicts({{0, C}, {1, I}}));
        const auto line = cor_err_to_jsonl({rec});
        CHECK(line.find("\"id\":\"f1\"") != std::string::npos);
        CHECK(line.find("\"excluded\":1") != std::string::npos);
        CHECK(line.find("\"sample_index\":1") != std::string::npos);
        CHECK(line.back() == '\n');
    }
}
