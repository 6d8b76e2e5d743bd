// Copyright 2026 The rtr Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Criteria 1-6 check arithmetic and mechanics against independent
// oracles; 7-8 train on the synthetic corpus; 9 drives the CLI binary.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "fmt/format.h"
#include "las_fixtures.h"
#include "oracles.h"
#include "rtr/dataset.h"
#include "rtr/evaluator.h"
#include "rtr/pipeline.h"
#include "rtr/reasoner.h"
#include "rtr/trainer.h"
#include "spdlog/spdlog.h"
#include "test_support.h"

namespace fs = std::filesystem;
using namespace rtr;
using rtr::testing::read_file;
using rtr::testing::TempDir;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

// Collects failed checks with a short reason; the first few are reported.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) reasons_ += (reasons_.empty() ? "" : "; ") + what;
  }
  Verdict verdict(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, fmt::format("{} ({} failed checks: {})", summary, failures_, reasons_)};
  }

 private:
  int failures_ = 0;
  std::string reasons_;
};

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

// Small deterministic-leak corpus with a vocabulary covering it.
struct SmallCorpus {
  SyntheticCorpus corpus;
  RationaleMap rationales;
  std::shared_ptr<const Tokenizer> tokenizer;
};

SmallCorpus small_corpus(std::size_t n, std::uint64_t seed) {
  SmallCorpus c;
  SyntheticOptions options;
  options.n = n;
  options.seed = seed;
  options.vocab_size = 24;
  c.corpus = generate_synthetic(options);
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& inst = c.corpus.split.instances[i];
    c.rationales[inst.id] = RationaleSet{inst.id, c.corpus.rationales[i], "acceptance", false, {}, {}};
    texts.push_back(inst.question);
    for (const auto& ch : inst.choices) texts.push_back(ch);
    for (const auto& r : c.corpus.rationales[i]) texts.push_back(r);
  }
  c.tokenizer = std::make_shared<WordTokenizer>(WordTokenizer::from_texts(texts));
  return c;
}

ToyReasoner small_model(std::shared_ptr<const Tokenizer> tok, std::uint64_t seed) {
  ToyReasonerConfig config;
  config.hidden = 8;
  config.seed = seed;
  return ToyReasoner(std::move(tok), config);
}

// 1 -------------------------------------------------------------------------

Verdict loss_arithmetic() {
  Checks checks;
  Rng rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const auto p = oracle::random_distribution(n, rng);
    const std::size_t gold = rng.uniform_index(n);
    const double eps = 0.01 + 0.98 * rng.uniform();
    const double std_err =
        std::abs(standard_loss(p, gold) - oracle::cross_entropy(p, oracle::smoothed(gold, n, 0.0)));
    const double cf_err = std::abs(counterfactual_loss(p, smooth_targets(gold, n, eps)) -
                                   oracle::cross_entropy(p, oracle::smoothed(gold, n, eps)));
    worst = std::max({worst, std_err, cf_err});
    checks.expect(std_err <= 1e-9, fmt::format("standard loss off by {:g}", std_err));
    checks.expect(cf_err <= 1e-9, fmt::format("counterfactual loss off by {:g}", cf_err));
  }
  const auto t = smooth_targets(0, 5, 0.1);
  checks.expect(t.values[0] == 0.92, fmt::format("smoothed gold {}", t.values[0]));
  for (std::size_t i = 1; i < 5; ++i) {
    checks.expect(t.values[i] == 0.02, fmt::format("smoothed other {}", t.values[i]));
  }
  return checks.verdict(fmt::format("100 vectors, worst abs error {:.2g}; 0.92/0.02 exact", worst));
}

// 2 -------------------------------------------------------------------------

Verdict gradient_check() {
  Checks checks;
  auto c = small_corpus(4, 21);
  ToyReasoner model = small_model(c.tokenizer, 5);
  Rng rng(8);
  std::size_t checked = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& inst = c.corpus.split.instances[k];
    const auto clean = encode_instance(inst, &c.rationales.at(inst.id), model);
    std::vector<EncodedInput> perturbed;
    for (const auto& e : clean) {
      perturbed.push_back(k % 2 == 0 ? perturb_mask(e)
                                     : perturb_replace(e, 0.3, model.vocab_size(), rng));
    }
    const auto gold = static_cast<std::size_t>(inst.gold_index);
    const double eps = 0.3;
    model.zero_gradients();
    choice_loss_and_gradient(model, clean, one_hot_targets(gold, clean.size()), 1.0);
    choice_loss_and_gradient(model, perturbed, smooth_targets(gold, clean.size(), eps), 1.0);
    const std::vector<double> analytic(model.gradients().begin(), model.gradients().end());
    const auto result = oracle::check_gradient(
        model, [&] { return oracle::combined_loss(model, clean, perturbed, gold, eps); },
        analytic, 25, 100 + k);
    checks.expect(result.ok, fmt::format("instance {} worst {:.2g} over {} parameters", k,
                                         result.worst_relative, result.nontrivial));
    checked += result.nontrivial;
    worst = std::max(worst, result.worst_relative);
  }
  checks.expect(checked >= 20, fmt::format("only {} parameters checked", checked));
  return checks.verdict(
      fmt::format("{} parameters over 3 instances, worst relative error {:.2g}", checked, worst));
}

// 3 -------------------------------------------------------------------------

Verdict masking_invariance() {
  Checks checks;
  auto c = small_corpus(10, 31);
  ToyReasoner model = small_model(c.tokenizer, 7);
  Rng rng(17);
  std::size_t compared = 0;
  for (const auto& inst : c.corpus.split.instances) {
    for (const auto& enc : encode_instance(inst, &c.rationales.at(inst.id), model)) {
      const double reference = plausibility(model, perturb_mask(enc));
      for (int trial = 0; trial < 50; ++trial) {
        EncodedInput other = enc;
        for (std::size_t i = other.rationale_span.start; i < other.rationale_span.end; ++i) {
          other.token_ids[i] = static_cast<TokenId>(
              SpecialTokens::kCount + rng.uniform_index(model.vocab_size() - SpecialTokens::kCount));
        }
        checks.expect(bit_equal(plausibility(model, perturb_mask(other)), reference),
                      inst.id + " plausibility moved");
        ++compared;
      }
    }
  }
  return checks.verdict(fmt::format("{} substitutions, all bit-identical", compared));
}

// 4 -------------------------------------------------------------------------

Verdict replacement_exactness() {
  Checks checks;
  EncodedInput enc;
  for (std::size_t i = 0; i < 20; ++i) {
    enc.token_ids.push_back(static_cast<TokenId>(SpecialTokens::kCount + i % 7));
  }
  enc.attention_mask.assign(enc.token_ids.size(), 1);
  enc.rationale_span = {4, 14};
  enc.answer_token_ids = {SpecialTokens::kCount};
  // Span tokens sit outside the sampling range so every replacement differs.
  for (std::size_t i = 4; i < 14; ++i) enc.token_ids[i] = SpecialTokens::kPlaceholder;
  Rng rng(99);
  for (int call = 0; call < 1000; ++call) {
    const auto out = perturb_replace(enc, 0.30, 60, rng);
    int in_span = 0, outside = 0;
    for (std::size_t i = 0; i < enc.token_ids.size(); ++i) {
      if (out.token_ids[i] == enc.token_ids[i]) continue;
      (enc.rationale_span.contains(i) ? in_span : outside) += 1;
    }
    checks.expect(in_span == 3 && outside == 0,
                  fmt::format("call {}: {} in span, {} outside", call, in_span, outside));
  }
  Rng pick(2023);
  const std::vector<Strategy> both = {Strategy::kMask, Strategy::kReplace};
  int mask = 0;
  for (int i = 0; i < 10000; ++i) mask += select_strategy(both, pick) == Strategy::kMask;
  const double fraction = mask / 10000.0;
  checks.expect(std::abs(fraction - 0.5) <= 0.02, fmt::format("mask fraction {}", fraction));
  return checks.verdict(
      fmt::format("1000 calls changed exactly 3 span tokens; mask fraction {:.4f}", fraction));
}

// 5 -------------------------------------------------------------------------

Verdict las_equivalence() {
  using namespace rtr::testing;
  Checks checks;
  {
    const auto f = make_fixture(16);
    const Simulator simulator(std::make_unique<FakeModel>(f.tokenizer, encoded_rule()));
    Rng rng(404);
    for (int dump_no = 0; dump_no < 20; ++dump_no) {
      const std::size_t n = 1 + rng.uniform_index(16);
      const auto dump = random_dump(f, n, rng);
      std::vector<std::size_t> target, with, without;
      for (const auto& r : dump) {
        const auto& inst = f.instances.at(r.id);
        target.push_back(r.predicted_index);
        with.push_back(rule_predict(inst, r.rationale_texts[r.predicted_index]));
        without.push_back(rule_predict(inst, std::nullopt));
      }
      const auto expected = oracle::las_by_enumeration(target, with, without);
      const auto got = las(simulator, dump, f.instances);
      checks.expect(got.las == expected.las && got.leaking_delta == expected.leaking &&
                        got.nonleaking_delta == expected.nonleaking,
                    fmt::format("dump {}: {} vs {}", dump_no, got.las, expected.las));
    }
  }
  const auto f = make_fixture(300, 9);
  Rng rng(2);
  const auto fit = anticorrelated_dump(f, 0, 240, rng);
  const auto eval = anticorrelated_dump(f, 240, 300, rng);
  SimulatorConfig config;
  config.train.epochs = 8;
  const auto simulator = train_simulator(fit, f.instances, f.tokenizer, 1, config);
  std::size_t hits_pred = 0, hits_gold = 0;
  for (const auto& r : eval) {
    const auto guess =
        simulator.predict(f.instances.at(r.id), r.rationale_texts[r.predicted_index]);
    hits_pred += guess == r.predicted_index;
    hits_gold += guess == r.gold_index;
  }
  checks.expect(hits_pred >= 54 && hits_gold <= 6,
                fmt::format("simulator hit prediction {}/60, gold {}/60", hits_pred, hits_gold));
  return checks.verdict(fmt::format(
      "20 dumps equal brute force; anticorrelated dump: simulator matches prediction {}/60, "
      "gold {}/60",
      hits_pred, hits_gold));
}

// 6 -------------------------------------------------------------------------

template <std::size_t N>
double worst_nrg_error(const rtr::testing::PublishedRow (&rows)[N]) {
  std::map<std::string, MethodMetrics> metrics;
  for (const auto& r : rows) metrics[r.method] = {r.accuracy, r.las};
  const auto scores = nrg(metrics);
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, std::abs(scores.at(r.method) - r.nrg));
  return worst;
}

Verdict nrg_reproduction() {
  Checks checks;
  const double csqa = worst_nrg_error(rtr::testing::kCsqa);
  const double qasc = worst_nrg_error(rtr::testing::kQasc);
  checks.expect(csqa <= 0.01, fmt::format("CSQA worst {:.4f}", csqa));
  checks.expect(qasc <= 0.01, fmt::format("QASC worst {:.4f}", qasc));
  std::map<std::string, MethodMetrics> m;
  for (const auto& r : rtr::testing::kCsqa) m[r.method] = {r.accuracy, r.las};
  const double counterfactual = nrg(m).at("counterfactual");
  return checks.verdict(fmt::format(
      "worst error CSQA {:.4f} (counterfactual {:.2f}), QASC {:.4f}", csqa, counterfactual, qasc));
}

// 7 and 8 ---------------------------------------------------------------------

// Synthetic workspace plus one run directory per training mode.
class SyntheticStudy {
 public:
  SyntheticStudy(const fs::path& root, const std::string& synth_overrides) : root_(root) {
    KeyValueConfig synth = KeyValueConfig::parse(synth_overrides, "<acceptance>");
    write_synthetic_workspace(resolve_config(std::nullopt, synth), root_ / "ws");
  }

  struct ModeRun {
    KeyValueConfig config;
    fs::path dir;
    TrainOutcome trained;
    EvalReport report;
  };

  ModeRun run(const std::string& name, const std::string& overrides, const std::string& suite) {
    ModeRun r;
    r.dir = root_ / "runs" / name;
    KeyValueConfig o = KeyValueConfig::parse(overrides, "<acceptance>");
    o.set("run_dir", r.dir.string());
    r.config = resolve_config(root_ / "ws" / "rtr.conf", o);
    const auto data = load_datasets(r.config);
    auto backend = make_backend(r.config, data);
    {
      RunDirectory run(r.dir, "rationalize", r.config);
      run_rationalize(r.config, run, *backend, data);
      run.finish();
    }
    {
      RunDirectory run(r.dir, "train", r.config);
      r.trained = run_train(r.config, run, data);
      run.finish();
    }
    RunDirectory run(r.dir, "evaluate", r.config);
    r.report = run_evaluate(r.config, run, data, *backend, parse_suite(suite));
    run.finish();
    return r;
  }

 private:
  fs::path root_;
};

constexpr const char* kStudyCorpus =
    "synth.n_train = 500\n"
    "synth.n_test = 100\n"
    "synth.choices = 4\n"
    "synth.cue_train = 1.0\n";
constexpr const char* kStudyRun =
    "seeds = 1,2,3,4\n"
    "epsilon = 0.7\n";

double best_dev(const TrainOutcome& t) {
  std::vector<double> v;
  for (const auto& log : t.logs) v.push_back(log.best_dev_acc);
  return mean(v);
}

Verdict end_to_end(const fs::path& root) {
  Checks checks;
  const std::string suite = "accuracy,las,stress";
  SyntheticStudy cue(root / "leak", kStudyCorpus);
  const auto cf = cue.run("counterfactual", std::string(kStudyRun) + "mode = counterfactual\n", suite);
  const auto st = cue.run("standard", std::string(kStudyRun) + "mode = standard\n", suite);
  const auto nr = cue.run("no_rationale", std::string(kStudyRun) + "mode = no_rationale\n",
                          "accuracy");
  SyntheticStudy none(root / "none", std::string(kStudyCorpus) + "synth.leak = none\n");
  const auto ns = none.run("counterfactual", std::string(kStudyRun) + "mode = counterfactual\n",
                           "accuracy,las");

  const double dev_cf = best_dev(cf.trained);
  const double nr_test = nr.report.metrics.at("accuracy").mean;
  const double drop_cf = cf.report.metrics.at("sensitivity_drop").mean;
  const double drop_st = st.report.metrics.at("sensitivity_drop").mean;
  const double las_cf = cf.report.metrics.at("las").mean;
  const double las_st = st.report.metrics.at("las").mean;
  const double las_none = ns.report.metrics.at("las").mean;

  checks.expect(dev_cf >= 0.95, fmt::format("(a) counterfactual dev {:.3f}", dev_cf));
  checks.expect(std::abs(nr_test - 0.25) <= 0.10, fmt::format("(b) no_rationale {:.3f}", nr_test));
  checks.expect(drop_cf > drop_st && drop_cf - drop_st >= 0.05,
                fmt::format("(c) drop {:.3f} vs {:.3f}", drop_cf, drop_st));
  checks.expect(las_cf > las_st && las_st >= las_none,
                fmt::format("(d) LAS {:.3f} > {:.3f} >= {:.3f}", las_cf, las_st, las_none));
  return checks.verdict(fmt::format(
      "(a) counterfactual dev {:.3f}; (b) no_rationale test {:.3f}; (c) drop counterfactual "
      "{:.3f} vs standard {:.3f}; (d) LAS counterfactual {:.3f}, standard {:.3f}, no-signal "
      "{:.3f}",
      dev_cf, nr_test, drop_cf, drop_st, las_cf, las_st, las_none));
}

Verdict epsilon_sweep(const fs::path& root) {
  Checks checks;
  SyntheticStudy cue(root / "sweep", kStudyCorpus);
  const auto r = cue.run("sweep", kStudyRun, "epsilon_sweep");
  std::size_t pairs = 0;
  for (const auto& [name, s] : r.report.metrics) {
    if (!name.ends_with(".accuracy")) continue;
    const std::string stem = name.substr(0, name.size() - std::string(".accuracy").size());
    pairs += r.report.metrics.count(stem + ".las");
  }
  checks.expect(pairs == 10, fmt::format("{} accuracy/LAS pairs", pairs));
  const double low = r.report.metrics.at("sweep.epsilon=0.1.masked_entropy").mean;
  const double high = r.report.metrics.at("sweep.epsilon=1.masked_entropy").mean;
  checks.expect(high > low, fmt::format("entropy {:.4f} <= {:.4f}", high, low));
  return checks.verdict(fmt::format(
      "{} pairs; masked-rationale prediction entropy {:.4f} at 1.0 vs {:.4f} at 0.1", pairs, high,
      low));
}

// 9 -------------------------------------------------------------------------

int run_cli(const std::string& command, const std::string& args) {
  const std::string cmd =
      std::string(RTR_CLI_PATH) + " " + command + " -q " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Compared files: everything under reports/, logs/, rationales/ and
// checkpoints/. manifest.json carries wall-clock timestamps and is left out.
std::vector<fs::path> compared_files(const fs::path& run) {
  std::vector<fs::path> out;
  for (const char* sub : {"reports", "logs", "rationales", "checkpoints"}) {
    for (const auto& e : fs::recursive_directory_iterator(run / sub)) {
      if (e.is_regular_file()) out.push_back(fs::relative(e.path(), run));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Verdict reproducibility(const fs::path& root) {
  Checks checks;
  std::size_t compared = 0;
  for (const std::string backend : {"knowledge", "mock"}) {
    std::vector<fs::path> runs;
    for (const std::string copy : {"a", "b"}) {
      const fs::path base = root / backend / copy;
      const std::string ws = (base / "ws").string();
      checks.expect(run_cli("synth", "--out " + ws +
                            " --set synth.n_train=120 --set synth.n_test=30 --set synth.n_sim=40"
                            " --set synth.n_ood=30") == 0,
                    "synth failed");
      const std::string common = " --config " + ws + "/rtr.conf --mock-backend " + backend +
                                 " --seeds 1,2 --set epochs=3 --set simulator.epochs=3 --out " +
                                 (base / "run").string();
      checks.expect(run_cli("rationalize", common) == 0, backend + " rationalize failed");
      checks.expect(run_cli("train", common) == 0, backend + " train failed");
      checks.expect(run_cli("evaluate", "--suite accuracy,las,stress,oracle,ood" + common) == 0,
                    backend + " evaluate failed");
      runs.push_back(base / "run");
    }
    if (!fs::exists(runs[0] / "reports/eval.json")) {
      checks.expect(false, backend + " run wrote no report");
      continue;
    }
    const auto files = compared_files(runs[0]);
    checks.expect(files == compared_files(runs[1]), backend + " runs wrote different files");
    for (const auto& f : files) {
      checks.expect(fs::exists(runs[1] / f) && read_file(runs[0] / f) == read_file(runs[1] / f),
                    backend + " " + f.string() + " differs");
      ++compared;
    }
  }
  return checks.verdict(fmt::format(
      "{} files byte-identical across repeated CLI runs (knowledge and mock backends)", compared));
}

}  // namespace

// Arguments, if any, pick criterion numbers to run.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  spdlog::set_level(spdlog::level::warn);
  TempDir scratch;
  struct Criterion {
    int number;
    const char* name;
    double budget_seconds;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "loss arithmetic", 1.0, loss_arithmetic},
      {2, "gradient check", 60.0, gradient_check},
      {3, "masking invariance", 10.0, masking_invariance},
      {4, "replacement exactness", 0.0, replacement_exactness},
      {5, "LAS oracle equivalence", 0.0, las_equivalence},
      {6, "NRG reproduction", 1.0, nrg_reproduction},
      {7, "end-to-end faithfulness", 1800.0, [&] { return end_to_end(scratch / "e2e"); }},
      {8, "epsilon sweep", 0.0, [&] { return epsilon_sweep(scratch / "sweep"); }},
      {9, "reproducibility", 0.0, [&] { return reproducibility(scratch / "repro"); }},
  };
  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.number)) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0.0 && seconds > c.budget_seconds) {
      v.pass = false;
      v.detail += fmt::format(" (over the {:g} s budget)", c.budget_seconds);
    }
    failed += !v.pass;
    std::cout << fmt::format("criterion {}: {} {} [{:.2f} s] {}", c.number,
                             v.pass ? "PASS" : "FAIL", c.name, seconds, v.detail)
              << std::endl;
  }
  std::cout << fmt::format("{}/{} criteria passed", ran - failed, ran)
            << std::endl;
  return failed == 0 ? 0 : 1;
}
