#pragma once

#include "reweight/common.hpp"

namespace reweight {

// Invertible feature entanglement x = S z with verified inverse T.
struct MixingMatrix {
  Mat S;
  Mat T;

  void validate() const;
};

// Random rotation-plus-scaling with condition number <= 10.
MixingMatrix make_mixing(int dim, std::uint64_t seed);

MixingMatrix identity_mixing(int dim);

// Row-wise application: X = Z * S^T.
Mat entangle(const Mat& Z, const MixingMatrix& mixing);

}  // namespace reweight
