#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "lgnn/tensor.hpp"

namespace lgnn {

// Images live in [0,1] after decoding; labels are CIFAR-style fine/coarse.
// Tensor extents are strictly positive, so an empty dataset keeps a zeroed
// placeholder image tensor and the record count comes from the labels.
struct Dataset {
  Tensor images{{1, 3, 32, 32}};
  std::vector<int> fine_labels;
  std::vector<int> coarse_labels;
  std::string split;

  int64_t size() const { return static_cast<int64_t>(fine_labels.size()); }
};

// 3074-byte records: coarse byte, fine byte, 3072 channel-major pixels.
// Split contract: train = 50000 records, test = 10000.
Dataset load_cifar100(const std::string& path, const std::string& split);

// Same record layout without the split-count contract (expected_records < 0
// accepts any count).
Dataset load_cifar_records(const std::string& path, const std::string& split,
                           int64_t expected_records = -1);
void save_cifar_records(const Dataset& ds, const std::string& path);

// Class-dependent oriented gratings with per-class tint plus noise;
// deterministic per seed.
Dataset synthetic_blobs(int classes, int per_class, uint64_t seed);

struct Normalization {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stddev{1, 1, 1};
};

// Per-channel statistics over every pixel of the (training) split.
Normalization channel_stats(const Dataset& ds);

struct BatchOptions {
  int batch_size = 64;
  bool shuffle = false;
  uint64_t seed = 0;
  bool augment = false;           // 4-pixel reflect pad crop + horizontal flip
  const Normalization* norm = nullptr;
};

// Ordered, exactly-once batch delivery. LGNN_PREFETCH_THREADS > 0 assembles
// batches ahead on worker threads; the stream contents are identical for any
// thread count because each batch derives its randomness from (seed, index).
class BatchStream {
 public:
  BatchStream(const Dataset& ds, BatchOptions opt);
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  // false once the epoch is exhausted
  bool next(Tensor& images, std::vector<int>& labels);
  int64_t batch_count() const { return nbatches_; }

 private:
  struct Batch {
    Tensor images{{1}};
    std::vector<int> labels;
  };

  Batch assemble(int64_t b) const;

  const Dataset& ds_;
  BatchOptions opt_;
  std::vector<int64_t> order_;
  int64_t nbatches_ = 0;
  int64_t next_out_ = 0;

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_ready_, cv_space_;
  std::map<int64_t, Batch> ready_;
  std::atomic<int64_t> next_job_{0};
  size_t max_ready_ = 4;
  bool stop_ = false;
};

// Parsed LGNN_PREFETCH_THREADS, clamped to [0, 8]; unset or malformed -> 0.
int prefetch_threads_from_env();

}  // namespace lgnn
