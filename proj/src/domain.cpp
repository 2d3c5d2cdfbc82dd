#include "starsr/domain.hpp"

namespace starsr {

DomainLabel encode_label(Domain id) {
  const int idx = static_cast<int>(id);
  if (idx < 0 || idx >= kNumDomains)
    throw ConfigError("encode_label: invalid domain id " + std::to_string(idx));
  DomainLabel label;
  label.id = id;
  label.onehot.fill(0.0f);
  label.onehot[idx] = 1.0f;
  return label;
}

Domain decode_label(const std::array<float, kNumDomains>& onehot) {
  int hot = -1;
  for (int i = 0; i < kNumDomains; ++i) {
    if (onehot[i] == 1.0f) {
      if (hot >= 0) throw ConfigError("decode_label: vector is not one-hot");
      hot = i;
    } else if (onehot[i] != 0.0f) {
      throw ConfigError("decode_label: vector is not one-hot");
    }
  }
  if (hot < 0) throw ConfigError("decode_label: vector is not one-hot");
  return static_cast<Domain>(hot);
}

DomainLabel label_from_index(int index) {
  if (index < 0 || index >= kNumDomains)
    throw ConfigError("label_from_index: invalid domain index " +
                      std::to_string(index));
  return encode_label(static_cast<Domain>(index));
}

std::string domain_name(Domain id) {
  switch (id) {
    case Domain::kBicubicLr: return "bicubic";
    case Domain::kBilinearLr: return "bilinear";
    case Domain::kNearestLr: return "nearest";
    case Domain::kRealLr: return "real";
    case Domain::kHr: return "hr";
  }
  throw ConfigError("domain_name: invalid domain id");
}

Domain domain_from_name(const std::string& name) {
  for (Domain d : kAllDomains)
    if (domain_name(d) == name) return d;
  throw ConfigError("unknown domain name '" + name + "'");
}

}  // namespace starsr
