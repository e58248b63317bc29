#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace pogmv {

// All recoverable failures carry a stable name (MissingFile, ShapeMismatch, ...)
// that the CLI prints on stderr before exiting nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& detail = "")
      : std::runtime_error(detail.empty() ? name : name + ": " + detail),
        name_(std::move(name)) {}

  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

}  // namespace pogmv
