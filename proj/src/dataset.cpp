#include "derm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "derm/error.hpp"
#include "nn/parallel.hpp"

namespace derm {

FileDataset::FileDataset(std::vector<LesionRecord> records, std::size_t cache_bytes)
    : records_(std::move(records)), cache_budget_(cache_bytes), cache_(records_.size()) {}

FileDataset FileDataset::select(std::span<const LesionRecord> catalog, std::span<const std::string> ids,
                                std::size_t cache_bytes) {
  std::unordered_map<std::string_view, const LesionRecord*> by_id;
  for (const LesionRecord& r : catalog) by_id.emplace(r.image_id, &r);
  std::vector<LesionRecord> picked;
  picked.reserve(ids.size());
  for (const std::string& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw IntegrityError("image " + id + " is listed in the manifest but not in the catalog");
    picked.push_back(*it->second);
  }
  return FileDataset(std::move(picked), cache_bytes);
}

Image FileDataset::image(std::size_t i) const {
  std::shared_ptr<const Cached> hit;
  {
    std::lock_guard lock(mutex_);
    hit = cache_.at(i);
  }
  if (hit) {
    Image img(hit->height, hit->width);
    for (std::size_t k = 0; k < hit->rgb.size(); ++k) img.pixels[k] = static_cast<float>(hit->rgb[k]) / 255.0f;
    return img;
  }
  Image img = read_image(records_[i].image_path, records_[i].image_id);
  auto entry = std::make_shared<Cached>();
  entry->height = img.height;
  entry->width = img.width;
  entry->rgb.resize(img.pixels.size());
  for (std::size_t k = 0; k < img.pixels.size(); ++k)
    entry->rgb[k] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[k], 0.0f, 1.0f) * 255.0f));
  // Decoded JPEG/PNG pixels are exact multiples of 1/255, so the cached copy
  // reproduces them bit for bit.
  {
    std::lock_guard lock(mutex_);
    if (!cache_[i] && cached_bytes_ + entry->rgb.size() <= cache_budget_) {
      cached_bytes_ += entry->rgb.size();
      cache_[i] = std::move(entry);
    }
  }
  return img;
}

InMemoryDataset::InMemoryDataset(std::vector<Image> images, std::vector<int> labels, std::vector<std::string> ids)
    : images_(std::move(images)), labels_(std::move(labels)), ids_(std::move(ids)) {
  if (labels_.size() != images_.size()) throw std::invalid_argument("one label per image required");
  if (ids_.empty())
    for (std::size_t i = 0; i < images_.size(); ++i) ids_.push_back("sample_" + std::to_string(i));
  if (ids_.size() != images_.size()) throw std::invalid_argument("one id per image required");
}

std::vector<Image> load_images(const Dataset& data, std::span<const std::size_t> indices,
                               const ImageTransform& transform) {
  std::vector<Image> images(indices.size());
  std::vector<std::exception_ptr> errors(indices.size());
  nn::detail::parallel_for(static_cast<int>(indices.size()), [&](int k) {
    const auto i = static_cast<std::size_t>(k);
    try {
      images[i] = transform(data.image(indices[i]), indices[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return images;
}

Tensor load_batch(const Dataset& data, std::span<const std::size_t> indices, const ImageTransform& transform) {
  return to_batch(load_images(data, indices, transform));
}

}  // namespace derm
