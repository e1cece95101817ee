// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace encguard {

enum class ErrorCode {
  // trace_ingest
  MalformedLine,
  DepthUnderflow,
  MissingColumn,
  NonMonotonicCounter,
  UnparsableKeyFile,
  EmptySymbolList,
  NoUserspaceActivity,
  // features
  EmptySession,
  SchemaMismatch,
  TooFewRows,
  InsufficientSessions,
  // selection
  NoOOBSamples,
  CurveTooShort,
  InvalidRange,
  // models
  EmptyMatrix,
  ModelUnfit,
  // policy / enforce
  InvalidProbability,
  InvalidPolicy,
  UnknownType,
  // simgen
  InvalidProfile,
  // evalkit
  DivisionByZero,
  NoRunData,
  // cli
  UnknownCommand,
  ConfigError,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::DepthUnderflow: return "DepthUnderflow";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonMonotonicCounter: return "NonMonotonicCounter";
    case ErrorCode::UnparsableKeyFile: return "UnparsableKeyFile";
    case ErrorCode::EmptySymbolList: return "EmptySymbolList";
    case ErrorCode::NoUserspaceActivity: return "NoUserspaceActivity";
    case ErrorCode::EmptySession: return "EmptySession";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::InsufficientSessions: return "InsufficientSessions";
    case ErrorCode::NoOOBSamples: return "NoOOBSamples";
    case ErrorCode::CurveTooShort: return "CurveTooShort";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::ModelUnfit: return "ModelUnfit";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::InvalidPolicy: return "InvalidPolicy";
    case ErrorCode::UnknownType: return "UnknownType";
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::NoRunData: return "NoRunData";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` names
/// the contract violation so callers (and the CLI exit-code mapping) can
/// branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace encguard
