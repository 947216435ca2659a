#pragma once

#include <stdexcept>
#include <string>

namespace hyperwave {

// Every failure raised by the library derives from Error so callers can
// report the originating module without catching each type separately.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

#define HYPERWAVE_ERROR(Name, Module)                                        \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& what) : Error(Module, what) {}      \
    }

HYPERWAVE_ERROR(InvalidArgument, "hypgeo");
HYPERWAVE_ERROR(CapExceeded, "fuchsian");
HYPERWAVE_ERROR(RelatorViolated, "fuchsian");
HYPERWAVE_ERROR(NotTransitive, "fuchsian");
HYPERWAVE_ERROR(InvalidGroup, "fuchsian");
HYPERWAVE_ERROR(HypothesisViolated, "kernels");
HYPERWAVE_ERROR(QuadratureFailure, "kernels");
HYPERWAVE_ERROR(SingularConfiguration, "kernels");
HYPERWAVE_ERROR(DisconnectedGraph, "spectral");
HYPERWAVE_ERROR(WindowUnreliable, "spectral");
HYPERWAVE_ERROR(InvalidParams, "spectral");
HYPERWAVE_ERROR(EmptyWindow, "qvar");
HYPERWAVE_ERROR(UndefinedRho, "qvar");
HYPERWAVE_ERROR(DenominatorDegenerate, "qvar");
HYPERWAVE_ERROR(ConfigError, "lab");
HYPERWAVE_ERROR(MissingArtifact, "lab");

#undef HYPERWAVE_ERROR

}  // namespace hyperwave
