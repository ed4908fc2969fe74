#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "derm/catalog.hpp"
#include "derm/image.hpp"
#include "derm/tensor.hpp"

namespace derm {

// Indexed labelled images. image() must be safe to call concurrently.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual int label(std::size_t i) const = 0;
  virtual const std::string& id(std::size_t i) const = 0;
  virtual Image image(std::size_t i) const = 0;
};

// Images decoded from disk on first use. Decoded pixels are kept as 8-bit
// RGB until `cache_bytes` is exhausted.
class FileDataset final : public Dataset {
 public:
  FileDataset(std::vector<LesionRecord> records, std::size_t cache_bytes = std::size_t{1} << 30);
  // The catalog records named by `ids`, in that order. Throws IntegrityError
  // for an id missing from the catalog.
  static FileDataset select(std::span<const LesionRecord> catalog, std::span<const std::string> ids,
                            std::size_t cache_bytes = std::size_t{1} << 30);

  std::size_t size() const override { return records_.size(); }
  int label(std::size_t i) const override { return index_of(records_[i].label); }
  const std::string& id(std::size_t i) const override { return records_[i].image_id; }
  Image image(std::size_t i) const override;
  const LesionRecord& record(std::size_t i) const { return records_[i]; }

 private:
  struct Cached {
    int height = 0, width = 0;
    std::vector<std::uint8_t> rgb;
  };
  std::vector<LesionRecord> records_;
  std::size_t cache_budget_;
  mutable std::mutex mutex_;
  mutable std::vector<std::shared_ptr<const Cached>> cache_;
  mutable std::size_t cached_bytes_ = 0;
};

class InMemoryDataset final : public Dataset {
 public:
  InMemoryDataset() = default;
  InMemoryDataset(std::vector<Image> images, std::vector<int> labels, std::vector<std::string> ids = {});

  std::size_t size() const override { return images_.size(); }
  int label(std::size_t i) const override { return labels_[i]; }
  const std::string& id(std::size_t i) const override { return ids_[i]; }
  Image image(std::size_t i) const override { return images_[i]; }

 private:
  std::vector<Image> images_;
  std::vector<int> labels_;
  std::vector<std::string> ids_;
};

// Loads and transforms the indexed images (in parallel when workers are
// available) and stacks them in index order.
using ImageTransform = std::function<Image(const Image&, std::size_t position)>;
std::vector<Image> load_images(const Dataset& data, std::span<const std::size_t> indices,
                               const ImageTransform& transform);
Tensor load_batch(const Dataset& data, std::span<const std::size_t> indices, const ImageTransform& transform);

}  // namespace derm
