#pragma once

#include <optional>
#include <string>
#include <vector>

#include "afa/matrix.hpp"
#include "json.hpp"

namespace afa {

enum class Split { train, val, test };

struct TabularDataset {
  Matrix x;                // n x d
  std::vector<int> y;      // class indices
  int num_classes = 0;
  Split split = Split::train;
  std::string name;
};

struct CubeSpec {
  std::size_t n_features = 20;
  int n_classes = 8;
  double informative_sigma = 0.3;
  double noise_mean = 0.5;
  double noise_sigma = 0.3;
  std::size_t n_train = 700, n_val = 150, n_test = 150;

  // Informative features of class k sit at {k, k+1, k+2} with means equal to
  // the 3-bit binary encoding of k (bit j-k at feature k+j).
  double informative_mean(int klass, std::size_t offset) const {
    return static_cast<double>((klass >> offset) & 1);
  }
};

struct AfaContextSpec {
  std::size_t n_features = 30;
  int n_classes = 8;
  std::size_t context_a = 0, context_b = 1;  // one-hot context pair
  std::size_t group_a_begin = 2, group_b_begin = 12;
  std::size_t group_size = 10;
  std::size_t padding_begin = 22;  // noise features up to n_features
  double informative_sigma = 0.3;
  double noise_mean = 0.5;
  double noise_sigma = 0.3;
  std::size_t n_train = 700, n_val = 150, n_test = 150;

  double informative_mean(int klass, std::size_t offset) const {
    return static_cast<double>((klass >> offset) & 1);
  }
  std::size_t group_begin(bool context_is_a) const {
    return context_is_a ? group_a_begin : group_b_begin;
  }
};

struct MaskingDistribution {
  double low = 0.0;
  double high = 0.9;

  void validate() const;
  static MaskingDistribution for_dataset(const std::string& name);
};

struct Standardization {
  std::vector<double> mean, sd;
};

// Ground-truth generator info, carried for oracle policies and tests.
struct DatasetBundle {
  TabularDataset train, val, test;
  int num_classes = 0;
  std::size_t n_features = 0;
  std::string name;
  std::uint64_t seed = 0;
  std::optional<CubeSpec> cube;
  std::optional<AfaContextSpec> afacontext;
  std::optional<Standardization> standardization;

  std::uint64_t data_fingerprint() const;
  nlohmann::json manifest() const;
};

DatasetBundle generate_cube(const CubeSpec& spec, std::uint64_t seed);
DatasetBundle generate_afacontext(const AfaContextSpec& spec, std::uint64_t seed);

struct CsvSchema {
  std::string label_column;
  int num_classes = 0;
  double train_frac = 0.70;
  double val_frac = 0.15;
};

// Reads a headered numeric CSV, splits by seeded shuffle and standardizes
// features with train-split statistics (zero-variance columns guarded to 1).
DatasetBundle load_csv(const std::string& path, const CsvSchema& schema,
                       std::uint64_t seed);

// Observation mask: entries are 0 (hidden) with one probability p ~ U(low,high)
// drawn per call, 1 (observed) otherwise.
Matrix sample_mask(std::size_t batch_size, std::size_t d,
                   const MaskingDistribution& dist, Rng& rng);

void write_dataset_csv(const TabularDataset& ds, const std::string& path);

}  // namespace afa
