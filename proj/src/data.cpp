#include "afa/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace afa {

void MaskingDistribution::validate() const {
  if (low < 0.0 || low > high || high >= 1.0)
    throw std::invalid_argument("MaskingDistribution: need 0 <= low <= high < 1");
}

MaskingDistribution MaskingDistribution::for_dataset(const std::string& name) {
  if (name == "mnist" || name == "fashionmnist") return {0.75, 0.99};
  return {0.0, 0.9};
}

std::uint64_t DatasetBundle::data_fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const TabularDataset* ds : {&train, &val, &test}) {
    h = fingerprint(ds->x, h);
    h = fnv1a(ds->y.data(), ds->y.size() * sizeof(int), h);
  }
  return h;
}

nlohmann::json DatasetBundle::manifest() const {
  nlohmann::json j;
  j["name"] = name;
  j["seed"] = seed;
  j["num_classes"] = num_classes;
  j["n_features"] = n_features;
  j["sizes"] = {train.x.rows, val.x.rows, test.x.rows};
  j["fingerprint"] = data_fingerprint();
  if (standardization) {
    j["standardization"] = {{"mean", standardization->mean}, {"sd", standardization->sd}};
  }
  return j;
}

namespace {

TabularDataset make_split(std::size_t n, std::size_t d, int num_classes, Split split,
                          const std::string& name) {
  TabularDataset ds;
  ds.x = Matrix(n, d);
  ds.y.assign(n, 0);
  ds.num_classes = num_classes;
  ds.split = split;
  ds.name = name;
  return ds;
}

void fill_cube_split(TabularDataset& ds, const CubeSpec& spec, Rng& rng) {
  for (std::size_t i = 0; i < ds.x.rows; ++i) {
    const int k = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(spec.n_classes)));
    ds.y[i] = k;
    double* row = ds.x.row(i);
    for (std::size_t j = 0; j < spec.n_features; ++j)
      row[j] = rng.normal(spec.noise_mean, spec.noise_sigma);
    for (std::size_t off = 0; off < 3; ++off)
      row[static_cast<std::size_t>(k) + off] =
          rng.normal(spec.informative_mean(k, off), spec.informative_sigma);
  }
}

void fill_afacontext_split(TabularDataset& ds, const AfaContextSpec& spec, Rng& rng) {
  for (std::size_t i = 0; i < ds.x.rows; ++i) {
    const bool context_is_a = rng.uniform() < 0.5;
    const int k = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(spec.n_classes)));
    ds.y[i] = k;
    double* row = ds.x.row(i);
    for (std::size_t j = 0; j < spec.n_features; ++j)
      row[j] = rng.normal(spec.noise_mean, spec.noise_sigma);
    row[spec.context_a] = context_is_a ? 1.0 : 0.0;
    row[spec.context_b] = context_is_a ? 0.0 : 1.0;
    const std::size_t base = spec.group_begin(context_is_a);
    for (std::size_t off = 0; off < 3; ++off)
      row[base + static_cast<std::size_t>(k) + off] =
          rng.normal(spec.informative_mean(k, off), spec.informative_sigma);
  }
}

}  // namespace

DatasetBundle generate_cube(const CubeSpec& spec, std::uint64_t seed) {
  DatasetBundle b;
  b.name = "cube";
  b.seed = seed;
  b.num_classes = spec.n_classes;
  b.n_features = spec.n_features;
  b.cube = spec;
  b.train = make_split(spec.n_train, spec.n_features, spec.n_classes, Split::train, b.name);
  b.val = make_split(spec.n_val, spec.n_features, spec.n_classes, Split::val, b.name);
  b.test = make_split(spec.n_test, spec.n_features, spec.n_classes, Split::test, b.name);
  Rng rng(seed);
  Rng r_train = rng.fork(1), r_val = rng.fork(2), r_test = rng.fork(3);
  fill_cube_split(b.train, spec, r_train);
  fill_cube_split(b.val, spec, r_val);
  fill_cube_split(b.test, spec, r_test);
  return b;
}

DatasetBundle generate_afacontext(const AfaContextSpec& spec, std::uint64_t seed) {
  DatasetBundle b;
  b.name = "afacontext";
  b.seed = seed;
  b.num_classes = spec.n_classes;
  b.n_features = spec.n_features;
  b.afacontext = spec;
  b.train = make_split(spec.n_train, spec.n_features, spec.n_classes, Split::train, b.name);
  b.val = make_split(spec.n_val, spec.n_features, spec.n_classes, Split::val, b.name);
  b.test = make_split(spec.n_test, spec.n_features, spec.n_classes, Split::test, b.name);
  Rng rng(seed);
  Rng r_train = rng.fork(1), r_val = rng.fork(2), r_test = rng.fork(3);
  fill_afacontext_split(b.train, spec, r_train);
  fill_afacontext_split(b.val, spec, r_val);
  fill_afacontext_split(b.test, spec, r_test);
  return b;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_number(const std::string& cell, std::size_t line_no, const std::string& col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first != last && *first == ' ') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw std::runtime_error("load_csv: non-numeric cell '" + cell + "' in column " + col +
                             " at line " + std::to_string(line_no));
  return v;
}

}  // namespace

DatasetBundle load_csv(const std::string& path, const CsvSchema& schema, std::uint64_t seed) {
  if (schema.num_classes < 2) throw std::invalid_argument("load_csv: num_classes must be >= 2");
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_csv: empty file " + path);
  const std::vector<std::string> header = split_line(line);
  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == schema.label_column) label_idx = i;
  if (label_idx == header.size())
    throw std::runtime_error("load_csv: label column '" + schema.label_column + "' not found");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("load_csv: ragged row at line " + std::to_string(line_no));
    std::vector<double> feats;
    feats.reserve(header.size() - 1);
    int label = -1;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const double v = parse_number(cells[i], line_no, header[i]);
      if (i == label_idx) {
        const double r = std::round(v);
        if (std::abs(v - r) > 1e-9 || r < 0 || r >= schema.num_classes)
          throw std::runtime_error("load_csv: unknown label value '" + cells[i] + "' at line " +
                                   std::to_string(line_no));
        label = static_cast<int>(r);
      } else {
        feats.push_back(v);
      }
    }
    rows.push_back(std::move(feats));
    labels.push_back(label);
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

  const std::size_t n = rows.size();
  const std::size_t d = rows[0].size();

  // Deterministic split: Fisher-Yates shuffle of row indices with Rng(seed),
  // then contiguous train/val/test slices.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const std::size_t n_train = static_cast<std::size_t>(std::floor(schema.train_frac * n));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(schema.val_frac * n));
  const std::size_t n_test = n - n_train - n_val;
  if (n_train == 0 || n_test == 0)
    throw std::runtime_error("load_csv: too few rows to split");

  DatasetBundle b;
  b.name = path;
  b.seed = seed;
  b.num_classes = schema.num_classes;
  b.n_features = d;
  b.train = make_split(n_train, d, schema.num_classes, Split::train, b.name);
  b.val = make_split(n_val, d, schema.num_classes, Split::val, b.name);
  b.test = make_split(n_test, d, schema.num_classes, Split::test, b.name);

  auto copy_rows = [&](TabularDataset& ds, std::size_t begin) {
    for (std::size_t i = 0; i < ds.x.rows; ++i) {
      const auto& src = rows[order[begin + i]];
      std::copy(src.begin(), src.end(), ds.x.row(i));
      ds.y[i] = labels[order[begin + i]];
    }
  };
  copy_rows(b.train, 0);
  copy_rows(b.val, n_train);
  copy_rows(b.test, n_train + n_val);

  // Standardize with train statistics only.
  Standardization st;
  st.mean.assign(d, 0.0);
  st.sd.assign(d, 0.0);
  for (std::size_t i = 0; i < b.train.x.rows; ++i)
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += b.train.x(i, j);
  for (std::size_t j = 0; j < d; ++j) st.mean[j] /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < b.train.x.rows; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = b.train.x(i, j) - st.mean[j];
      st.sd[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    st.sd[j] = std::sqrt(st.sd[j] / static_cast<double>(n_train));
    if (st.sd[j] == 0.0) st.sd[j] = 1.0;
  }
  for (TabularDataset* ds : {&b.train, &b.val, &b.test})
    for (std::size_t i = 0; i < ds->x.rows; ++i)
      for (std::size_t j = 0; j < d; ++j)
        ds->x(i, j) = (ds->x(i, j) - st.mean[j]) / st.sd[j];
  b.standardization = std::move(st);
  return b;
}

Matrix sample_mask(std::size_t batch_size, std::size_t d, const MaskingDistribution& dist,
                   Rng& rng) {
  dist.validate();
  const double p = dist.low == dist.high ? dist.low : rng.uniform(dist.low, dist.high);
  Matrix mask(batch_size, d, 1.0);
  for (auto& m : mask.data)
    if (rng.uniform() < p) m = 0.0;
  return mask;
}

void write_dataset_csv(const TabularDataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_dataset_csv: cannot open " + path);
  for (std::size_t j = 0; j < ds.x.cols; ++j) f << "f" << j << ",";
  f << "label\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.x.rows; ++i) {
    for (std::size_t j = 0; j < ds.x.cols; ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, ds.x(i, j));
      f.write(buf, ptr - buf);
      f.put(',');
    }
    f << ds.y[i] << "\n";
  }
}

}  // namespace afa
