// include/campnet/types.hpp

// Copyright 2026  The campnet Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace campnet {

inline constexpr int kFeatureDim = 32;
inline constexpr int kBfccDim = 30;
inline constexpr int kPitchIndex = 30;
inline constexpr int kPitchCorrIndex = 31;
inline constexpr int kHopMs = 10;

/// Row-major dynamic matrix; rows are time steps or sequence positions.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// T x 32 acoustic features as stored on disk (float32, row-major).
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor>;

using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CAMPNET_DEFINE_ERROR(Name)      \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

CAMPNET_DEFINE_ERROR(IngestError);
CAMPNET_DEFINE_ERROR(FormatError);
CAMPNET_DEFINE_ERROR(IoError);
CAMPNET_DEFINE_ERROR(EditError);
CAMPNET_DEFINE_ERROR(MaskError);
CAMPNET_DEFINE_ERROR(ModelError);
CAMPNET_DEFINE_ERROR(TrainError);
CAMPNET_DEFINE_ERROR(AdaptError);
CAMPNET_DEFINE_ERROR(MetricError);

#undef CAMPNET_DEFINE_ERROR

}  // namespace campnet
