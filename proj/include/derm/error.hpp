#pragma once

#include <stdexcept>
#include <string>

namespace derm {

// Base for every failure the pipeline reports. The CLI maps the concrete
// subclasses onto exit codes (config 2, data 3, everything else 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent metadata catalog.
class CatalogError : public DataError {
 public:
  using DataError::DataError;
};

// A lesion whose images carry conflicting labels, or a manifest that does not
// match its catalog.
class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

class ImageReadError : public DataError {
 public:
  ImageReadError(std::string image_id, const std::string& what)
      : DataError(what), image_id_(std::move(image_id)) {}
  const std::string& image_id() const { return image_id_; }

 private:
  std::string image_id_;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public ModelError {
 public:
  using ModelError::ModelError;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace derm
