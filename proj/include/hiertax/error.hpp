#pragma once

#include <stdexcept>
#include <string>

namespace hiertax {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad shapes, invalid indices, violated call contracts. Exit code 2 at the CLI.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent input files and datasets. Exit code 2 at the CLI.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite loss or gradients during optimization. Exit code 3 at the CLI.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace hiertax
