#pragma once

#include <memory>
#include <string>

#include "afa/env.hpp"

namespace afa {

// Common interface: map an acquisition state to the next feature index.
class AcquisitionPolicy {
 public:
  virtual ~AcquisitionPolicy() = default;
  virtual std::string id() const = 0;
  // Called once before an instance's episode; policies with per-instance
  // randomness (e.g. a random evaluation order) set it up here.
  virtual void begin_instance(std::size_t /*instance*/, Rng& /*rng*/) {}
  virtual int select(const AcquisitionState& s, Rng& rng) = 0;
  // Jointly trained classifier, when the method has one.
  virtual const ProbModel* builtin() const { return nullptr; }
};

class RandomPolicy : public AcquisitionPolicy {
 public:
  std::string id() const override { return "random"; }
  int select(const AcquisitionState& s, Rng& rng) override;
};

}  // namespace afa
