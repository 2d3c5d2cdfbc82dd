#pragma once

#include <array>
#include <string>

#include "starsr/common.hpp"

namespace starsr {

// The five image populations the toolkit translates among.
enum class Domain : int {
  kBicubicLr = 0,
  kBilinearLr = 1,
  kNearestLr = 2,
  kRealLr = 3,
  kHr = 4,
};

inline constexpr int kNumDomains = 5;
inline constexpr std::array<Domain, kNumDomains> kAllDomains = {
    Domain::kBicubicLr, Domain::kBilinearLr, Domain::kNearestLr,
    Domain::kRealLr, Domain::kHr};

struct DomainLabel {
  Domain id = Domain::kHr;
  std::array<float, kNumDomains> onehot{};
};

DomainLabel encode_label(Domain id);
Domain decode_label(const std::array<float, kNumDomains>& onehot);
DomainLabel label_from_index(int index);

std::string domain_name(Domain id);
Domain domain_from_name(const std::string& name);

inline bool is_lr_domain(Domain id) { return id != Domain::kHr; }
inline bool is_synthetic_lr(Domain id) {
  return id == Domain::kBicubicLr || id == Domain::kBilinearLr ||
         id == Domain::kNearestLr;
}

}  // namespace starsr
