// Copyright 2026 The DACT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Finite-difference checks of every hand-written loss gradient on small
// random instances. Shared by the unit tests and the acceptance binary.

#ifndef DACT_TESTS_GRADIENT_CHECKS_HPP_
#define DACT_TESTS_GRADIENT_CHECKS_HPP_

#include <algorithm>
#include <string>
#include <vector>

#include "dact/cdim.hpp"
#include "dact/rq_tokenizer.hpp"
#include "test_util.hpp"

namespace dact::testing {

enum class GradLoss { kRecon, kRq, kCf, kAnchor, kGlobal, kReg, kConfidence };

inline const char* grad_loss_name(GradLoss l) {
  switch (l) {
    case GradLoss::kRecon: return "recon";
    case GradLoss::kRq: return "rq";
    case GradLoss::kCf: return "cf";
    case GradLoss::kAnchor: return "anchor";
    case GradLoss::kGlobal: return "global";
    case GradLoss::kReg: return "reg";
    case GradLoss::kConfidence: return "confidence";
  }
  return "?";
}

struct GradCheckSummary {
  int instances = 0;
  double max_rel_error = 0.0;
  double min_grad_norm = 1e300;  // guards against vacuous all-zero comparisons
};

namespace detail {

inline Matrix random_probs(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix p(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) p(i, j) = u(rng) < 0.2 ? 0.0 : u(rng);
    p(i, i % cols) += 0.1;
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline Vector random_coefs(Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Vector c(n);
  for (auto& x : c) x = u(rng);
  return c;
}

inline void record(GradCheckSummary& s, const std::vector<Matrix>& analytic, const std::vector<Matrix>& numeric) {
  ++s.instances;
  s.max_rel_error = std::max(s.max_rel_error, relative_error(analytic, numeric));
  s.min_grad_norm = std::min(s.min_grad_norm, norm_of(analytic));
}

// Tokenizer losses. Quantization is piecewise constant, so the reference
// functions hold the straight-through offset and stop-gradient operands
// fixed at their values in the base pass; each is then smooth in the
// parameters and its central difference is the gradient the backward pass
// claims to compute.
inline void tokenizer_instance(GradLoss which, Rng& rng, GradCheckSummary& s) {
  rq::TokenizerConfig cfg;
  cfg.semantic_dim = 6;
  cfg.hidden = {7};
  cfg.code_dim = 4;
  cfg.levels = 3;
  cfg.codes = 5;
  std::uniform_int_distribution<int> coin(0, 1);
  cfg.cf_dim = which == GradLoss::kCf && coin(rng) ? 3 : 4;
  rq::Tokenizer tok(cfg, rng);
  for (auto& l : tok.codebooks.levels) l.value *= 5.0;  // spread codes so several are in play
  const int b = 8;
  const Matrix z = gaussian_matrix(b, cfg.semantic_dim, 1.0, rng);
  const Matrix h = gaussian_matrix(b, cfg.cf_dim, 1.0, rng);
  const Matrix prev = gaussian_matrix(b, cfg.code_dim, 0.5, rng);
  const Matrix probs = random_probs(b, cfg.codes, rng);
  const double mu = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
  const double kl_t = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  const Vector c = random_coefs(b, rng);

  rq::BatchInputs in;
  in.semantic = &z;
  in.mu = mu;
  in.kl_temperature = kl_t;
  if (which == GradLoss::kCf) in.cf = &h;
  if (which == GradLoss::kAnchor) in.prev_latent = &prev;
  if (which == GradLoss::kGlobal) in.prev_probs = &probs;

  auto params = tok.params();
  nn::zero_grads(params);
  const rq::TokenizerPass base(tok, in);
  rq::LossCoefficients coef;
  switch (which) {
    case GradLoss::kRecon: coef.recon = c; break;
    case GradLoss::kRq: coef.rq = c; break;
    case GradLoss::kCf: coef.cf = c; break;
    case GradLoss::kAnchor: coef.anchor = c; break;
    default: coef.kl = c; break;
  }
  base.backward(tok, coef);
  const auto analytic = snapshot_grads(params);

  const Matrix offset = base.quantized() - base.latent();
  const Matrix v1_0 = base.latent();
  const auto codes = base.codes();
  std::vector<Matrix> e0;
  for (const auto& l : tok.codebooks.levels) e0.push_back(l.value);

  auto f = [&]() -> double {
    switch (which) {
      case GradLoss::kRecon: {
        const Matrix rec = tok.decoder.forward(tok.encode_batch(z) + offset);
        return c.dot((z - rec).rowwise().squaredNorm()) / cfg.semantic_dim;
      }
      case GradLoss::kCf: {
        Matrix q = tok.encode_batch(z) + offset;
        if (tok.cf_projection) q = tok.cf_projection->forward(q);
        return c.dot(rq::cf_loss_per_anchor(q, h));
      }
      case GradLoss::kRq: {
        const Matrix v1 = tok.encode_batch(z);
        double total = 0.0;
        for (int i = 0; i < b; ++i) {
          RowVector stop_v = v1_0.row(i);  // sg[v_l]
          RowVector live_v = v1.row(i);    // v_l with earlier codes held fixed
          for (int l = 0; l < cfg.levels; ++l) {
            const int code = codes[i][l];
            const double first = (stop_v - tok.codebooks.levels[l].value.row(code)).squaredNorm();
            const double second = (live_v - e0[l].row(code)).squaredNorm();
            total += c[i] * (first + mu * second) / cfg.code_dim;
            stop_v -= e0[l].row(code);
            live_v -= e0[l].row(code);
          }
        }
        return total;
      }
      default: {
        const rq::TokenizerPass pass(tok, in);
        const auto& l = pass.losses();
        return c.dot(which == GradLoss::kAnchor ? l.anchor : l.kl);
      }
    }
  };
  record(s, analytic, numeric_grads(params, f));
}

inline void memory_instance(GradLoss which, Rng& rng, GradCheckSummary& s) {
  cdim::CdimConfig cfg;
  cfg.slots = 4;
  cfg.code_dim = 3;
  cfg.head_hidden = 5;
  cfg.temperature = std::uniform_real_distribution<double>(0.3, 1.5)(rng);
  cdim::PatternMemory mem(cfg, rng);
  const int b = 8;
  const Matrix q = cdim::build_queries(gaussian_matrix(b, 3, 1.0, rng), gaussian_matrix(b, 3, 1.0, rng),
                                       gaussian_matrix(b, 3, 1.0, rng));
  auto params = mem.params();
  nn::zero_grads(params);
  const auto pass = mem.forward(q);
  const Vector w = gaussian_matrix(b, 1, 1.0, rng).col(0);
  if (which == GradLoss::kReg) {
    mem.backward(pass, (2.0 / b) * pass.d);
  } else {
    mem.backward(pass, w);
  }
  const auto analytic = snapshot_grads(params);
  auto f = [&]() {
    const Vector d = mem.forward(q).d;
    return which == GradLoss::kReg ? cdim::reg_loss(d) : w.dot(d);
  };
  record(s, analytic, numeric_grads(params, f));
}

}  // namespace detail

inline GradCheckSummary run_gradient_check(GradLoss which, int instances, std::uint64_t seed) {
  Rng rng(seed);
  GradCheckSummary s;
  for (int k = 0; k < instances; ++k) {
    if (which == GradLoss::kReg || which == GradLoss::kConfidence) {
      detail::memory_instance(which, rng, s);
    } else {
      detail::tokenizer_instance(which, rng, s);
    }
  }
  return s;
}

inline std::vector<GradLoss> all_grad_losses() {
  return {GradLoss::kRecon, GradLoss::kRq,  GradLoss::kCf,        GradLoss::kAnchor,
          GradLoss::kGlobal, GradLoss::kReg, GradLoss::kConfidence};
}

}  // namespace dact::testing

#endif  // DACT_TESTS_GRADIENT_CHECKS_HPP_
