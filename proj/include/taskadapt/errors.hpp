#pragma once

#include <stdexcept>
#include <string>

namespace taskadapt {

// Base class for all library errors so the CLI can map them to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MalformedInstruction : Error {
    MalformedInstruction(std::size_t position, const std::string& reason)
        : Error("malformed instruction at word " + std::to_string(position) + ": " + reason),
          position(position), reason(reason) {}
    std::size_t position;
    std::string reason;
};

struct InsufficientPopulation : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct PlacementImpossible : Error {
    using Error::Error;
};

struct SteppingFinishedEpisode : Error {
    using Error::Error;
};

struct NonFiniteLoss : Error {
    using Error::Error;
};

struct CorruptSnapshot : Error {
    using Error::Error;
};

struct VersionMismatch : Error {
    using Error::Error;
};

struct NoPoliciesConverged : Error {
    using Error::Error;
};

struct DegenerateDataset : Error {
    using Error::Error;
};

struct MissingArtifact : Error {
    using Error::Error;
};

}  // namespace taskadapt
