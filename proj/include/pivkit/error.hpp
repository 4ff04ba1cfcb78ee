#pragma once

#include <stdexcept>
#include <string>

namespace pivkit {

// Raised for I/O, format and precondition failures. Messages are meant to be
// shown to the user as-is.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Wraps an error with the name of the pipeline stage that raised it.
inline Error with_stage(const std::string& stage, const std::exception& e)
{
    return Error("[" + stage + "] " + e.what());
}

} // namespace pivkit
