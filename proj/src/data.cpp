#include "lgnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>

namespace lgnn {

namespace {

constexpr int64_t kRecordBytes = 3074;
constexpr int64_t kPixels = 3072;

int64_t expected_for_split(const std::string& split) {
  if (split == "train") return 50000;
  if (split == "test") return 10000;
  throw ConfigError("cifar: split must be train or test, got " + split);
}

}  // namespace

Dataset load_cifar_records(const std::string& path, const std::string& split,
                           int64_t expected_records) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cifar: cannot open " + path);
  const int64_t bytes = static_cast<int64_t>(in.tellg());
  if (bytes % kRecordBytes != 0)
    throw FormatError("cifar: file size " + std::to_string(bytes) +
                      " is not a multiple of the 3074-byte record");
  const int64_t n = bytes / kRecordBytes;
  if (expected_records >= 0 && n != expected_records)
    throw FormatError("cifar: expected " + std::to_string(expected_records) + " records, found " +
                      std::to_string(n));
  in.seekg(0);

  Dataset ds;
  ds.split = split;
  if (n > 0) ds.images = Tensor({n, 3, 32, 32});
  ds.fine_labels.resize(static_cast<size_t>(n));
  ds.coarse_labels.resize(static_cast<size_t>(n));

  std::vector<uint8_t> rec(kRecordBytes);
  for (int64_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(rec.data()), kRecordBytes);
    if (!in) throw FormatError("cifar: short read in " + path);
    const int coarse = rec[0], fine = rec[1];
    if (coarse >= 20) throw LabelError("cifar: coarse label " + std::to_string(coarse));
    if (fine >= 100) throw LabelError("cifar: fine label " + std::to_string(fine));
    ds.coarse_labels[static_cast<size_t>(i)] = coarse;
    ds.fine_labels[static_cast<size_t>(i)] = fine;
    float* dst = ds.images.ptr() + i * kPixels;
    for (int64_t p = 0; p < kPixels; ++p) dst[p] = static_cast<float>(rec[2 + p]) / 255.f;
  }
  return ds;
}

Dataset load_cifar100(const std::string& path, const std::string& split) {
  return load_cifar_records(path, split, expected_for_split(split));
}

void save_cifar_records(const Dataset& ds, const std::string& path) {
  if (ds.size() != static_cast<int64_t>(ds.coarse_labels.size()) ||
      (ds.size() > 0 && ds.images.dim(0) != ds.size()))
    throw ShapeError("cifar: image/label counts disagree");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cifar: cannot open " + path + " for writing");
  std::vector<uint8_t> rec(kRecordBytes);
  for (int64_t i = 0; i < ds.size(); ++i) {
    rec[0] = static_cast<uint8_t>(ds.coarse_labels[static_cast<size_t>(i)]);
    rec[1] = static_cast<uint8_t>(ds.fine_labels[static_cast<size_t>(i)]);
    const float* src = ds.images.ptr() + i * kPixels;
    for (int64_t p = 0; p < kPixels; ++p)
      rec[2 + p] = static_cast<uint8_t>(std::lround(std::clamp(src[p], 0.f, 1.f) * 255.f));
    out.write(reinterpret_cast<const char*>(rec.data()), kRecordBytes);
  }
  if (!out) throw FormatError("cifar: short write to " + path);
}

Dataset synthetic_blobs(int classes, int per_class, uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic_blobs: need at least 2 classes");
  if (per_class < 0) throw ConfigError("synthetic_blobs: per_class must be >= 0");
  const int64_t n = static_cast<int64_t>(classes) * per_class;
  Dataset ds;
  ds.split = "synthetic";
  if (n > 0) ds.images = Tensor({n, 3, 32, 32});
  ds.fine_labels.resize(static_cast<size_t>(n));
  ds.coarse_labels.resize(static_cast<size_t>(n));

  std::mt19937 rng(static_cast<uint32_t>(seed));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::normal_distribution<double> noise(0.0, 0.05);

  int64_t i = 0;
  for (int k = 0; k < classes; ++k) {
    const double theta = M_PI * static_cast<double>(k) / static_cast<double>(classes);
    const double freq = 3.0 + static_cast<double>(k % 3);
    // per-class tint keeps channels informative as well as the orientation
    const double tint[3] = {0.6 + 0.4 * std::cos(theta), 0.6 + 0.4 * std::sin(theta),
                            0.6 + 0.4 * std::cos(2.0 * theta)};
    for (int s = 0; s < per_class; ++s, ++i) {
      const double phi = phase(rng);
      float* img = ds.images.ptr() + i * kPixels;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          const double u = (x * std::cos(theta) + y * std::sin(theta)) / 32.0;
          const double wave = 0.5 + 0.35 * std::sin(2.0 * M_PI * freq * u + phi);
          for (int c = 0; c < 3; ++c) {
            const double v = wave * tint[c] + noise(rng);
            img[c * 1024 + y * 32 + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      ds.fine_labels[static_cast<size_t>(i)] = k;
      ds.coarse_labels[static_cast<size_t>(i)] = k % 20;
    }
  }
  return ds;
}

Normalization channel_stats(const Dataset& ds) {
  Normalization norm;
  const int64_t n = ds.size();
  if (n == 0) return norm;
  const int64_t plane = 1024;
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (int64_t i = 0; i < n; ++i) {
      const float* p = ds.images.ptr() + i * kPixels + c * plane;
      for (int64_t j = 0; j < plane; ++j) {
        sum += p[j];
        sq += static_cast<double>(p[j]) * p[j];
      }
    }
    const double count = static_cast<double>(n * plane);
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    norm.mean[static_cast<size_t>(c)] = mean;
    norm.stddev[static_cast<size_t>(c)] = std::max(std::sqrt(var), 1e-8);
  }
  return norm;
}

int prefetch_threads_from_env() {
  const char* raw = std::getenv("LGNN_PREFETCH_THREADS");
  if (!raw) return 0;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0') return 0;
  return static_cast<int>(std::clamp(v, 0L, 8L));
}

BatchStream::BatchStream(const Dataset& ds, BatchOptions opt) : ds_(ds), opt_(opt) {
  if (opt_.batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
  const int64_t n = ds_.size();
  order_.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order_[static_cast<size_t>(i)] = i;
  if (opt_.shuffle) {
    std::mt19937_64 rng(opt_.seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  nbatches_ = (n + opt_.batch_size - 1) / opt_.batch_size;

  const int threads = prefetch_threads_from_env();
  if (threads > 0 && nbatches_ > 1) {
    max_ready_ = static_cast<size_t>(2 * threads);
    for (int t = 0; t < threads; ++t)
      workers_.emplace_back([this] {
        for (;;) {
          const int64_t b = next_job_.fetch_add(1);
          if (b >= nbatches_) return;
          Batch made = assemble(b);
          std::unique_lock<std::mutex> lock(mu_);
          // the batch the consumer is waiting on may always enter, so a full
          // buffer of later batches cannot wedge the pipeline
          cv_space_.wait(lock,
                         [&] { return stop_ || ready_.size() < max_ready_ || b == next_out_; });
          if (stop_) return;
          ready_.emplace(b, std::move(made));
          cv_ready_.notify_all();
        }
      });
  }
}

BatchStream::~BatchStream() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_space_.notify_all();
  for (auto& w : workers_) w.join();
}

BatchStream::Batch BatchStream::assemble(int64_t b) const {
  const int64_t n = ds_.size();
  const int64_t lo = b * opt_.batch_size;
  const int64_t hi = std::min(lo + opt_.batch_size, n);
  const int64_t k = hi - lo;
  Batch out;
  out.images = Tensor({k, 3, 32, 32});
  out.labels.resize(static_cast<size_t>(k));

  std::mt19937 rng(static_cast<uint32_t>(opt_.seed * 0x9E3779B9u + 0x85EBCA6Bu +
                                         static_cast<uint64_t>(b)));
  std::uniform_int_distribution<int> shift(0, 8);
  std::uniform_int_distribution<int> coin(0, 1);

  for (int64_t j = 0; j < k; ++j) {
    const int64_t src_idx = order_[static_cast<size_t>(lo + j)];
    out.labels[static_cast<size_t>(j)] = ds_.fine_labels[static_cast<size_t>(src_idx)];
    const float* src = ds_.images.ptr() + src_idx * kPixels;
    float* dst = out.images.ptr() + j * kPixels;

    int dy = 4, dx = 4, flip = 0;
    if (opt_.augment) {
      dy = shift(rng);
      dx = shift(rng);
      flip = coin(rng);
    }
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          int sy = y + dy - 4;
          int sx = x + dx - 4;
          if (sy < 0) sy = -sy;
          if (sy > 31) sy = 62 - sy;
          if (sx < 0) sx = -sx;
          if (sx > 31) sx = 62 - sx;
          if (flip) sx = 31 - sx;
          float v = src[c * 1024 + sy * 32 + sx];
          if (opt_.norm)
            v = static_cast<float>((v - opt_.norm->mean[static_cast<size_t>(c)]) /
                                   opt_.norm->stddev[static_cast<size_t>(c)]);
          dst[c * 1024 + y * 32 + x] = v;
        }
  }
  return out;
}

bool BatchStream::next(Tensor& images, std::vector<int>& labels) {
  if (next_out_ >= nbatches_) return false;
  Batch batch;
  if (workers_.empty()) {
    batch = assemble(next_out_);
  } else {
    std::unique_lock<std::mutex> lock(mu_);
    cv_ready_.wait(lock, [&] { return ready_.count(next_out_) > 0; });
    batch = std::move(ready_.at(next_out_));
    ready_.erase(next_out_);
    cv_space_.notify_all();
  }
  ++next_out_;
  images = std::move(batch.images);
  labels = std::move(batch.labels);
  return true;
}

}  // namespace lgnn
