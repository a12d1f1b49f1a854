#pragma once

#include <stdexcept>
#include <string>

namespace mint {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class ConfigurationError : public Error {
public:
    using Error::Error;
};

/// Missing or malformed corpus files. The message names the offending file.
class IngestionError : public Error {
public:
    using Error::Error;
};

/// Checksum or provenance mismatch.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// The audit protocol cannot be followed (empty member set, a class without externals, ...).
class ProtocolError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class CatalogError : public Error {
public:
    using Error::Error;
};

class ConsistencyError : public Error {
public:
    using Error::Error;
};

class EnsembleIncompleteError : public Error {
public:
    using Error::Error;
};

/// A metric is not defined for the input (e.g. AUC with a single label value).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// Pipeline stage failure, carrying the stage name and the artifact it was working on.
class StageError : public Error {
public:
    StageError(std::string stage, std::string artifact, const std::string& cause)
        : Error("stage '" + stage + "' failed (artifact: " + artifact + "): " + cause),
          stage_(std::move(stage)),
          artifact_(std::move(artifact)) {}

    const std::string& stage() const noexcept { return stage_; }
    const std::string& artifact() const noexcept { return artifact_; }

private:
    std::string stage_;
    std::string artifact_;
};

}  // namespace mint
