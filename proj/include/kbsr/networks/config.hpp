#pragma once

#include <stdexcept>
#include <string>

#include "kbsr/blocks/blocks.hpp"
#include "kbsr/degradation/degrade.hpp"

namespace kbsr {

enum class Variant { kDbpnBl, kKcbpn, kKbpn };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kDbpnBl:
      return "dbpn_bl";
    case Variant::kKcbpn:
      return "kcbpn";
    case Variant::kKbpn:
      return "kbpn";
  }
  throw std::logic_error("unknown variant");
}

inline Variant parse_variant(const std::string& s) {
  if (s == "dbpn_bl") return Variant::kDbpnBl;
  if (s == "kcbpn") return Variant::kKcbpn;
  if (s == "kbpn") return Variant::kKbpn;
  throw std::invalid_argument("unknown variant: " + s + " (expected dbpn_bl|kcbpn|kbpn)");
}

struct NetworkConfig {
  Variant variant = Variant::kKbpn;
  int stages = 4;  // T
  int scale = 4;
  int base_channels = 64;
  int kernel_size = 21;  // k
  int code_dim = 9;      // a, width of the PCA kernel code (kcbpn)
  int channels = 3;      // image channels C
  double slope = 0.1;
  DownMode down_mode = DownMode::area;
  bool enhance = true;  // kbpn: feed the LR residual back into stage features

  BlockConfig block() const { return {base_channels, scale, kernel_size, slope}; }
};

inline void require_network_config(const NetworkConfig& cfg) {
  require_block_config(cfg.block());
  if (cfg.stages < 1) throw std::invalid_argument("stages must be >= 1");
  if (cfg.code_dim < 1) throw std::invalid_argument("code_dim must be >= 1");
  if (cfg.channels < 1) throw std::invalid_argument("channels must be >= 1");
}

}  // namespace kbsr
