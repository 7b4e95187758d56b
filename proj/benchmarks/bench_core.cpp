#include <benchmark/benchmark.h>

#include <random>

#include "medcritical/dpo_core.hpp"
#include "medcritical/gateway.hpp"
#include "medcritical/questions.hpp"
#include "medcritical/tagged_response.hpp"
#include "medcritical/templates.hpp"

using namespace medcritical;

namespace {

struct Instance {
    dpo::ToyPolicy theta, ref;
    std::vector<dpo::ToyPair> pairs;
};

Instance make_instance(std::size_t prompts, std::size_t completions) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-3, 3);
    Instance in{dpo::ToyPolicy(prompts, completions), dpo::ToyPolicy(prompts, completions), {}};
    for (auto& x : in.theta.logits().values()) x = u(rng);
    for (auto& x : in.ref.logits().values()) x = u(rng);
    for (std::size_t p = 0; p < prompts; ++p) {
        for (std::size_t c = 1; c < completions; ++c) in.pairs.push_back({p, 0, c});
    }
    return in;
}

void BM_DpoLoss(benchmark::State& state) {
    const auto in = make_instance(static_cast<std::size_t>(state.range(0)), 8);
    for (auto _ : state) benchmark::DoNotOptimize(dpo::dpo_loss(in.theta, in.ref, in.pairs, 0.1).loss);
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.pairs.size()));
}
BENCHMARK(BM_DpoLoss)->Arg(4)->Arg(64)->Arg(1024);

void BM_DpoGradient(benchmark::State& state) {
    const auto in = make_instance(static_cast<std::size_t>(state.range(0)), 8);
    for (auto _ : state) benchmark::DoNotOptimize(dpo::dpo_gradient(in.theta, in.ref, in.pairs, 0.1));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.pairs.size()));
}
BENCHMARK(BM_DpoGradient)->Arg(4)->Arg(64)->Arg(1024);

void BM_ParseTagged(benchmark::State& state) {
    const std::string think(static_cast<std::size_t>(state.range(0)), 'x');
    const auto text = serialize_tagged(think, "The answer is B.");
    for (auto _ : state) benchmark::DoNotOptimize(try_parse_tagged_response(text));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_ParseTagged)->Arg(256)->Arg(16384);

void BM_CacheKey(benchmark::State& state) {
    auto ep = EndpointConfig::for_role(EndpointRole::Student);
    ep.base_url = "http://127.0.0.1:8000/v1";
    ep.model_id = "student-7b";
    CompletionRequest req;
    req.prompt.text = std::string(4096, 'q');
    req.temperature = 0.9;
    for (auto _ : state) benchmark::DoNotOptimize(cache_key(ep, req));
}
BENCHMARK(BM_CacheKey);

void BM_RenderStudentPrompt(benchmark::State& state) {
    const Question q{"q", "Which nerve is compressed in carpal tunnel syndrome",
                     {{"A", "Ulnar"}, {"B", "Median"}, {"C", "Radial"}}, "B", Split::Test};
    const auto bindings = question_bindings(q);
    const auto& tmpl = default_template(TemplateKind::StudentCot);
    for (auto _ : state) benchmark::DoNotOptimize(render_prompt(tmpl, bindings));
}
BENCHMARK(BM_RenderStudentPrompt);

}  // namespace

BENCHMARK_MAIN();
