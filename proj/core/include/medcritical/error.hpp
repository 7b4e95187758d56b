#pragma once

#include <stdexcept>
#include <string>

namespace medcritical {

// Base for every error raised by the library. Callers that only need a
// message catch this; callers that branch on the failure use the subclasses.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration or violated precondition. Aborts a whole stage.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace medcritical
