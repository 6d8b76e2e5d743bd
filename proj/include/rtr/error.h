// Copyright 2026 The rtr Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RTR_ERROR_H_
#define RTR_ERROR_H_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rtr {

// Broad failure classes. The CLI maps each one to an exit code.
enum class ErrorKind {
  kUsage,
  kData,
  kBackend,
  kNumerical,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retryable)
      : Error(ErrorKind::kBackend, what), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::kNumerical, what) {}
};

// dataset

class MalformedRecord : public DataError {
 public:
  MalformedRecord(std::size_t line, const std::string& reason)
      : DataError("malformed record at line " + std::to_string(line) + ": " +
                  reason),
        line_(line),
        reason_(reason) {}
  std::size_t line() const { return line_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

class DuplicateId : public DataError {
 public:
  explicit DuplicateId(const std::string& id)
      : DataError("duplicate instance id: " + id), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class ChoiceCountMismatch : public DataError {
 public:
  ChoiceCountMismatch(std::size_t line, std::size_t expected, std::size_t got)
      : DataError("choice count mismatch at line " + std::to_string(line) +
                  ": expected " + std::to_string(expected) + ", got " +
                  std::to_string(got)) {}
};

class EmptySplit : public DataError {
 public:
  explicit EmptySplit(const std::string& what) : DataError(what) {}
};

// rationalizer

class UnknownChoice : public DataError {
 public:
  explicit UnknownChoice(const std::string& choice)
      : DataError("target choice not among choices: " + choice) {}
};

class BackendUnavailable : public BackendError {
 public:
  explicit BackendUnavailable(const std::string& what)
      : BackendError("backend unavailable: " + what, /*retryable=*/true) {}
};

class CacheCorrupt : public DataError {
 public:
  explicit CacheCorrupt(const std::string& what)
      : DataError("cache corrupt: " + what) {}
};

// reasoner / trainer

class SequenceTooLong : public DataError {
 public:
  explicit SequenceTooLong(const std::string& what) : DataError(what) {}
};

class MissingRationales : public DataError {
 public:
  explicit MissingRationales(const std::string& id)
      : DataError("no rationales for instance " + id), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class NonFiniteLoss : public NumericalError {
 public:
  explicit NonFiniteLoss(const std::string& what)
      : NumericalError("non-finite loss: " + what) {}
};

// evaluator

class EmptyPredictions : public DataError {
 public:
  EmptyPredictions() : DataError("prediction list is empty") {}
};

class MissingAnnotatedRationale : public DataError {
 public:
  explicit MissingAnnotatedRationale(const std::string& id)
      : DataError("instance has no annotated rationale: " + id), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class SameSourceTarget : public UsageError {
 public:
  explicit SameSourceTarget(const std::string& tag)
      : UsageError("out-of-distribution target shares the source dataset '" +
                   tag + "'") {}
};

}  // namespace rtr

#endif  // RTR_ERROR_H_
