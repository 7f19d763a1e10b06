#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace somdagmm {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// Misuse of an API contract (e.g. a second backward pass over the same tape).
class ContractError : public Error {
public:
    using Error::Error;
};

class SingularMatrix : public Error {
public:
    SingularMatrix(const std::string& what, std::size_t component)
        : Error(what + " (component " + std::to_string(component) + ")"),
          component_(component) {}

    std::size_t component() const noexcept { return component_; }

private:
    std::size_t component_;
};

/// Bad input data: parse failures, schema mismatches, unknown categories under
/// the reject policy, malformed files.
class DataError : public Error {
public:
    using Error::Error;
};

class DivergedTraining : public Error {
public:
    DivergedTraining(std::size_t epoch, std::size_t batch, long last_good_epoch)
        : Error("training diverged (non-finite objective) at epoch " + std::to_string(epoch) +
                ", batch " + std::to_string(batch) + "; last good epoch " +
                std::to_string(last_good_epoch)),
          epoch_(epoch),
          batch_(batch),
          last_good_epoch_(last_good_epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }
    /// -1 when no epoch completed.
    long last_good_epoch() const noexcept { return last_good_epoch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
    long last_good_epoch_;
};

}  // namespace somdagmm
