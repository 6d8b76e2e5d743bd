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

#include "rtr/reasoner.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "rtr/error.h"
#include "rtr/random.h"

namespace rtr {

void ReasonerModel::zero_gradients() {
  auto g = gradients();
  std::fill(g.begin(), g.end(), 0.0);
}

namespace {

// Segment ids: 0 question, 1..kMaxChoiceSegments one per choice in order,
// then the rationale. Per-choice ids let the model tell choices apart by
// position.
constexpr std::size_t kMaxChoiceSegments = 8;
constexpr std::size_t kRationaleSegment = kMaxChoiceSegments + 1;
constexpr std::size_t kSegments = kMaxChoiceSegments + 2;

// y += W x, W is rows x cols row-major.
void matvec_add(const double* w, const double* x, double* y, std::size_t rows,
                std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

// y += W^T x
void matvec_t_add(const double* w, const double* x, double* y, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += row[c] * xr;
  }
}

// W += a b^T
void outer_add(double* w, const double* a, const double* b, std::size_t rows,
               std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += ar * b[c];
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void softmax_inplace(std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    total += x;
  }
  for (double& x : v) x /= total;
}

}  // namespace

struct ToyReasoner::Layout {
  std::size_t vocab = 0;
  std::size_t d = 0;
  std::size_t positions = 0;
  std::size_t embed = 0, segment = 0, position = 0, enc_w = 0, enc_b = 0,
              summary = 0, dec_u = 0, dec_c = 0, dec_b = 0, query = 0,
              sentinel_w = 0, sentinel_b = 0, out_w = 0, out_b = 0, total = 0;

  Layout(std::size_t v, std::size_t dim, std::size_t pos) : vocab(v), d(dim), positions(pos) {
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
      const std::size_t start = at;
      at += n;
      return start;
    };
    embed = take(v * d);
    segment = take(kSegments * d);
    position = take(pos * d);
    enc_w = take(d * d);
    enc_b = take(d);
    summary = take(d);
    dec_u = take(d * d);
    dec_c = take(d * d);
    dec_b = take(d);
    query = take(d * d);
    sentinel_w = take(d);
    sentinel_b = take(1);
    out_w = take(v * d);
    out_b = take(v);
    total = at;
  }
};

struct ToyReasoner::Trace {
  std::vector<std::size_t> active;  // unmasked positions
  std::vector<std::size_t> seg, pos;
  std::vector<double> e, h;          // |active| x d
  std::vector<double> beta;          // summary weights
  std::vector<double> c;             // d
  struct Step {
    TokenId prev = 0;
    std::vector<double> z, qv, alpha, pi;
    double prob = 0.0;
    std::vector<double> dist;  // only when requested
  };
  std::vector<Step> steps;
};

ToyReasoner::ToyReasoner(std::shared_ptr<const Tokenizer> tokenizer,
                         ToyReasonerConfig config)
    : tokenizer_(std::move(tokenizer)), config_(config) {
  layout_ = std::make_shared<Layout>(tokenizer_->vocab_size(), config_.hidden,
                                     config_.max_segment_position);
  params_.assign(layout_->total, 0.0);
  grads_.assign(layout_->total, 0.0);
  Rng rng(config_.seed);
  const double matrix_scale = config_.init_scale / std::sqrt(double(config_.hidden));
  const auto& L = *layout_;
  auto fill = [&](std::size_t start, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) params_[start + i] = rng.normal(0.0, scale);
  };
  const std::size_t d = L.d;
  fill(L.embed, L.vocab * d, config_.init_scale);
  fill(L.segment, kSegments * d, config_.init_scale);
  fill(L.position, L.positions * d, config_.init_scale);
  fill(L.enc_w, d * d, matrix_scale * 3.0);
  fill(L.summary, d, config_.init_scale);
  fill(L.dec_u, d * d, matrix_scale * 3.0);
  fill(L.dec_c, d * d, matrix_scale * 3.0);
  fill(L.query, d * d, matrix_scale * 3.0);
  fill(L.sentinel_w, d, config_.init_scale);
  fill(L.out_w, L.vocab * d, config_.init_scale);
}

void ToyReasoner::forward(const EncodedInput& input, Trace& trace,
                          bool keep_distribution) const {
  const auto& L = *layout_;
  const std::size_t d = L.d;
  const double* p = params_.data();
  const std::size_t n_tokens = input.token_ids.size();

  trace.active.clear();
  trace.seg.clear();
  trace.pos.clear();
  std::size_t seg = 0, pos = 0;
  for (std::size_t t = 0; t < n_tokens; ++t) {
    const TokenId id = input.token_ids[t];
    if (id == SpecialTokens::kSep) {
      seg = std::min(seg + 1, kMaxChoiceSegments);
      pos = 0;
    } else if (id == SpecialTokens::kRationale) {
      seg = kRationaleSegment;
      pos = 0;
    }
    if (input.attention_mask[t]) {
      trace.active.push_back(t);
      trace.seg.push_back(seg);
      trace.pos.push_back(std::min(pos, L.positions - 1));
    }
    ++pos;
  }

  const std::size_t n = trace.active.size();
  trace.e.assign(n * d, 0.0);
  trace.h.assign(n * d, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const TokenId id = input.token_ids[trace.active[k]];
    double* e = &trace.e[k * d];
    double* h = &trace.h[k * d];
    for (std::size_t i = 0; i < d; ++i) {
      e[i] = p[L.embed + id * d + i] + p[L.segment + trace.seg[k] * d + i] +
             p[L.position + trace.pos[k] * d + i];
      h[i] = p[L.enc_b + i];
    }
    matvec_add(p + L.enc_w, e, h, d, d);
    for (std::size_t i = 0; i < d; ++i) h[i] = std::tanh(h[i]);
  }

  trace.c.assign(d, 0.0);
  trace.beta.assign(n, 0.0);
  if (n > 0) {
    for (std::size_t k = 0; k < n; ++k) {
      trace.beta[k] = dot(p + L.summary, &trace.h[k * d], d);
    }
    softmax_inplace(trace.beta);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < d; ++i) trace.c[i] += trace.beta[k] * trace.h[k * d + i];
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
  trace.steps.resize(input.answer_token_ids.size());
  for (std::size_t j = 0; j < trace.steps.size(); ++j) {
    auto& step = trace.steps[j];
    step.prev = j == 0 ? SpecialTokens::kBos : input.answer_token_ids[j - 1];
    const TokenId y = input.answer_token_ids[j];

    std::vector<double> g(p + L.dec_b, p + L.dec_b + d);
    matvec_add(p + L.dec_u, p + L.embed + step.prev * d, g.data(), d, d);
    matvec_add(p + L.dec_c, trace.c.data(), g.data(), d, d);
    step.z.resize(d);
    for (std::size_t i = 0; i < d; ++i) step.z[i] = std::tanh(g[i]);

    step.qv.assign(d, 0.0);
    matvec_add(p + L.query, step.z.data(), step.qv.data(), d, d);

    step.alpha.resize(n + 1);
    step.alpha[0] = dot(p + L.sentinel_w, step.z.data(), d) + p[L.sentinel_b];
    for (std::size_t k = 0; k < n; ++k) {
      step.alpha[k + 1] = dot(step.qv.data(), &trace.h[k * d], d) * inv_sqrt_d;
    }
    softmax_inplace(step.alpha);

    step.pi.assign(p + L.out_b, p + L.out_b + L.vocab);
    matvec_add(p + L.out_w, step.z.data(), step.pi.data(), L.vocab, d);
    softmax_inplace(step.pi);

    double prob = step.alpha[0] * step.pi[y];
    for (std::size_t k = 0; k < n; ++k) {
      if (input.token_ids[trace.active[k]] == y) prob += step.alpha[k + 1];
    }
    step.prob = prob;

    if (keep_distribution) {
      step.dist.resize(L.vocab);
      for (std::size_t v = 0; v < L.vocab; ++v) step.dist[v] = step.alpha[0] * step.pi[v];
      for (std::size_t k = 0; k < n; ++k) {
        step.dist[input.token_ids[trace.active[k]]] += step.alpha[k + 1];
      }
    }
  }
}

std::vector<std::vector<double>> ToyReasoner::output_distributions(
    const EncodedInput& input) const {
  Trace trace;
  forward(input, trace, /*keep_distribution=*/true);
  std::vector<std::vector<double>> out;
  for (auto& step : trace.steps) out.push_back(std::move(step.dist));
  return out;
}

std::vector<double> ToyReasoner::forced_token_probabilities(
    const EncodedInput& input) const {
  Trace trace;
  forward(input, trace, /*keep_distribution=*/false);
  std::vector<double> out;
  out.reserve(trace.steps.size());
  for (const auto& step : trace.steps) out.push_back(step.prob);
  return out;
}

void ToyReasoner::accumulate_gradient(const EncodedInput& input,
                                      std::span<const double> upstream) {
  Trace trace;
  forward(input, trace, /*keep_distribution=*/false);
  const auto& L = *layout_;
  const std::size_t d = L.d;
  const std::size_t n = trace.active.size();
  const double* p = params_.data();
  double* gp = grads_.data();
  const double inv_sqrt_d = 1.0 / std::sqrt(double(d));

  std::vector<double> dh(n * d, 0.0);
  std::vector<double> dc(d, 0.0);
  std::vector<double> dz(d), dqv(d), dg(d), dl(L.vocab);

  for (std::size_t j = 0; j < trace.steps.size(); ++j) {
    if (upstream[j] == 0.0) continue;
    const auto& step = trace.steps[j];
    const TokenId y = input.answer_token_ids[j];
    const double dprob = upstream[j] / step.prob;

    std::vector<double> dalpha(n + 1, 0.0);
    dalpha[0] = dprob * step.pi[y];
    for (std::size_t k = 0; k < n; ++k) {
      if (input.token_ids[trace.active[k]] == y) dalpha[k + 1] = dprob;
    }
    const double dpi_y = dprob * step.alpha[0];

    std::fill(dz.begin(), dz.end(), 0.0);
    // Generator softmax.
    for (std::size_t v = 0; v < L.vocab; ++v) {
      dl[v] = dpi_y * step.pi[y] * ((v == static_cast<std::size_t>(y) ? 1.0 : 0.0) - step.pi[v]);
      gp[L.out_b + v] += dl[v];
    }
    outer_add(gp + L.out_w, dl.data(), step.z.data(), L.vocab, d);
    matvec_t_add(p + L.out_w, dl.data(), dz.data(), L.vocab, d);

    // Pointer/sentinel softmax.
    double weighted = 0.0;
    for (std::size_t k = 0; k <= n; ++k) weighted += step.alpha[k] * dalpha[k];
    const double ds0 = step.alpha[0] * (dalpha[0] - weighted);
    for (std::size_t i = 0; i < d; ++i) {
      gp[L.sentinel_w + i] += ds0 * step.z[i];
      dz[i] += ds0 * p[L.sentinel_w + i];
    }
    gp[L.sentinel_b] += ds0;

    std::fill(dqv.begin(), dqv.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const double ds = step.alpha[k + 1] * (dalpha[k + 1] - weighted) * inv_sqrt_d;
      if (ds == 0.0) continue;
      const double* h = &trace.h[k * d];
      for (std::size_t i = 0; i < d; ++i) {
        dqv[i] += ds * h[i];
        dh[k * d + i] += ds * step.qv[i];
      }
    }
    outer_add(gp + L.query, dqv.data(), step.z.data(), d, d);
    matvec_t_add(p + L.query, dqv.data(), dz.data(), d, d);

    // Decoder state.
    for (std::size_t i = 0; i < d; ++i) {
      dg[i] = dz[i] * (1.0 - step.z[i] * step.z[i]);
      gp[L.dec_b + i] += dg[i];
    }
    const double* u = p + L.embed + step.prev * d;
    outer_add(gp + L.dec_u, dg.data(), u, d, d);
    matvec_t_add(p + L.dec_u, dg.data(), gp + L.embed + step.prev * d, d, d);
    outer_add(gp + L.dec_c, dg.data(), trace.c.data(), d, d);
    matvec_t_add(p + L.dec_c, dg.data(), dc.data(), d, d);
  }

  // Summary attention.
  if (n > 0) {
    std::vector<double> dbeta(n);
    double weighted = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      dbeta[k] = dot(dc.data(), &trace.h[k * d], d);
      weighted += trace.beta[k] * dbeta[k];
    }
    for (std::size_t k = 0; k < n; ++k) {
      const double dsc = trace.beta[k] * (dbeta[k] - weighted);
      const double* h = &trace.h[k * d];
      for (std::size_t i = 0; i < d; ++i) {
        dh[k * d + i] += trace.beta[k] * dc[i] + dsc * p[L.summary + i];
        gp[L.summary + i] += dsc * h[i];
      }
    }
  }

  // Encoder.
  std::vector<double> da(d), de(d);
  for (std::size_t k = 0; k < n; ++k) {
    const double* h = &trace.h[k * d];
    for (std::size_t i = 0; i < d; ++i) {
      da[i] = dh[k * d + i] * (1.0 - h[i] * h[i]);
      gp[L.enc_b + i] += da[i];
    }
    outer_add(gp + L.enc_w, da.data(), &trace.e[k * d], d, d);
    std::fill(de.begin(), de.end(), 0.0);
    matvec_t_add(p + L.enc_w, da.data(), de.data(), d, d);
    const TokenId id = input.token_ids[trace.active[k]];
    for (std::size_t i = 0; i < d; ++i) {
      gp[L.embed + id * d + i] += de[i];
      gp[L.segment + trace.seg[k] * d + i] += de[i];
      gp[L.position + trace.pos[k] * d + i] += de[i];
    }
  }
}

std::unique_ptr<ReasonerModel> ToyReasoner::clone() const {
  return std::make_unique<ToyReasoner>(*this);
}

std::string checkpoint_manifest_json(const ToyReasoner& model) {
  nlohmann::ordered_json j;
  j["vocab_size"] = model.vocab_size();
  j["max_len"] = model.max_len();
  j["tokenizer_id"] = model.tokenizer().id();
  j["seed"] = model.config().seed;
  j["architecture"] = "toy-pointer-sentinel";
  j["hidden"] = model.config().hidden;
  j["max_segment_position"] = model.config().max_segment_position;
  j["n_parameters"] = model.parameters().size();
  return j.dump(2);
}

void ToyReasoner::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "model.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint in " + dir.string());
    const std::uint64_t count = params_.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(params_.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
  }
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    out << checkpoint_manifest_json(*this) << '\n';
  }
  tokenizer_->save(dir / "vocab.txt");
}

std::unique_ptr<ToyReasoner> ToyReasoner::load(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json", std::ios::binary);
  if (!mf) throw DataError("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint manifest: " + std::string(e.what()));
  }
  std::shared_ptr<const Tokenizer> tokenizer = load_tokenizer(dir / "vocab.txt");
  if (tokenizer->id() != manifest.at("tokenizer_id").get<std::string>() ||
      tokenizer->vocab_size() != manifest.at("vocab_size").get<std::size_t>()) {
    throw DataError("checkpoint vocabulary does not match its manifest");
  }
  ToyReasonerConfig config;
  config.hidden = manifest.at("hidden").get<std::size_t>();
  config.max_len = manifest.at("max_len").get<std::size_t>();
  config.max_segment_position = manifest.at("max_segment_position").get<std::size_t>();
  config.seed = manifest.at("seed").get<std::uint64_t>();
  auto model = std::make_unique<ToyReasoner>(tokenizer, config);

  std::ifstream in(dir / "model.bin", std::ios::binary);
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || count != model->params_.size()) {
    throw DataError("checkpoint parameter count mismatch in " + dir.string());
  }
  in.read(reinterpret_cast<char*>(model->params_.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw DataError("truncated checkpoint in " + dir.string());
  return model;
}

// Encoding -----------------------------------------------------------------

EncodedInput encode(const QAInstance& instance,
                    const std::optional<std::string>& rationale,
                    std::size_t choice_index, const ReasonerModel& model) {
  if (choice_index >= instance.choices.size()) {
    throw DataError("choice index out of range for " + instance.id);
  }
  const Tokenizer& tok = model.tokenizer();
  EncodedInput enc;
  auto& ids = enc.token_ids;

  const auto q = tok.encode(instance.question);
  ids.insert(ids.end(), q.begin(), q.end());
  enc.question_span = {0, ids.size()};
  for (const auto& choice : instance.choices) {
    ids.push_back(SpecialTokens::kSep);
    const auto a = tok.encode(choice);
    ids.insert(ids.end(), a.begin(), a.end());
  }
  enc.answer_token_ids = tok.encode(instance.choices[choice_index]);
  if (enc.answer_token_ids.empty()) {
    throw DataError("choice tokenizes to nothing in " + instance.id);
  }

  if (rationale) {
    auto r = tok.encode(*rationale);
    if (r.empty()) r.push_back(SpecialTokens::kPlaceholder);
    if (ids.size() + 2 > model.max_len()) {
      throw SequenceTooLong(instance.id + ": question and choices need " +
                            std::to_string(ids.size() + 2) + " tokens, limit " +
                            std::to_string(model.max_len()));
    }
    const std::size_t room = model.max_len() - ids.size() - 1;
    if (r.size() > room) {
      r.resize(room);
      enc.rationale_truncated = true;
    }
    ids.push_back(SpecialTokens::kRationale);
    enc.rationale_span.start = ids.size();
    ids.insert(ids.end(), r.begin(), r.end());
    enc.rationale_span.end = ids.size();
  } else {
    if (ids.size() > model.max_len()) {
      throw SequenceTooLong(instance.id + ": question and choices exceed " +
                            std::to_string(model.max_len()) + " tokens");
    }
    enc.rationale_span = {ids.size(), ids.size()};
  }
  enc.attention_mask.assign(ids.size(), 1);
  return enc;
}

// Scoring ------------------------------------------------------------------

double plausibility_from_probabilities(std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) total += p > 1e-12 ? std::log(p) : kLogProbFloor;
  return total / static_cast<double>(probs.size());
}

std::vector<double> plausibility_weights(std::span<const double> probs) {
  std::vector<double> w(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) {
    w[j] = probs[j] > 1e-12 ? 1.0 / static_cast<double>(probs.size()) : 0.0;
  }
  return w;
}

double plausibility(const ReasonerModel& model, const EncodedInput& input) {
  if (input.answer_token_ids.empty()) throw DataError("no answer tokens to score");
  return plausibility_from_probabilities(model.forced_token_probabilities(input));
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ChoiceScores scores_from_rho(std::vector<double> rho) {
  ChoiceScores scores;
  scores.probabilities = softmax(rho);
  scores.predicted_index = argmax(scores.probabilities);
  scores.rho = std::move(rho);
  return scores;
}

ChoiceScores score_choices(const ReasonerModel& model, const QAInstance& instance,
                           const RationaleSet* rationales) {
  if (rationales && rationales->rationales.size() != instance.choices.size()) {
    throw DataError("rationale count does not match choices for " + instance.id);
  }
  std::vector<double> rho;
  rho.reserve(instance.choices.size());
  for (std::size_t i = 0; i < instance.choices.size(); ++i) {
    std::optional<std::string> r;
    if (rationales) r = rationales->rationales[i];
    rho.push_back(plausibility(model, encode(instance, r, i, model)));
  }
  return scores_from_rho(std::move(rho));
}

std::string prediction_json(const std::string& id, const ChoiceScores& scores) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["probabilities"] = scores.probabilities;
  j["predicted_index"] = scores.predicted_index;
  return j.dump();
}

}  // namespace rtr
