#pragma once

#include <cstdint>
#include <vector>

#include "limcal/backbone.hpp"
#include "limcal/lim.hpp"
#include "limcal/rng.hpp"

namespace fixtures {

using namespace limcal;

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal() * scale;
  return m;
}

// Backbone with every tensor (LayerNorm included) drawn at random so that
// oracle comparisons exercise all parameters.
inline BackboneParams random_backbone(std::uint64_t seed, BackboneConfig config = {}) {
  BackboneParams p = init_backbone(config, seed);
  Rng rng(seed + 99);
  BackboneParams::visit(p, [&](const std::string& name, Matrix& m) {
    const bool ln = name.find("gamma") != std::string::npos;
    for (double& v : m.values()) v = ln ? 1.0 + 0.2 * rng.normal() : 0.3 * rng.normal();
  });
  return p;
}

inline LimParams random_lim(std::uint64_t seed, LimConfig config = {}) {
  LimParams p = init_lim(config, seed);
  Rng rng(seed + 77);
  LimParams::visit(p, [&](const std::string& name, Matrix& m) {
    const bool ln = name.find("gamma") != std::string::npos;
    for (double& v : m.values()) v = ln ? 1.0 + 0.2 * rng.normal() : 0.3 * rng.normal();
  });
  return p;
}

inline TokenIds random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  TokenIds out(n);
  for (auto& t : out) t = static_cast<std::uint32_t>(rng.below(vocab));
  return out;
}

}  // namespace fixtures
