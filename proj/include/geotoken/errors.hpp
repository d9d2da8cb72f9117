#pragma once

#include <stdexcept>
#include <string>

namespace geotoken {

// Wrong vector length, odd/zero dimension, or dimension not divisible by 3.
class InvalidDimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor shapes that do not compose (matmul inner dims, tag lengths, ...).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value outside its mathematical domain, e.g. latitude beyond +-90 degrees.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN or Inf produced anywhere in the tensor pipeline.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Cross-entropy requested with every position masked out.
class EmptyLossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabularyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// JSONL record missing a key or carrying a value of the wrong type.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training aborted; the message names the epoch and batch.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace geotoken
