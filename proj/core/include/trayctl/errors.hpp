#pragma once

#include <stdexcept>
#include <string>

namespace trayctl {

// Normal force vanished: the object is not pressed onto the tray.
struct NotInContactError : std::runtime_error {
  explicit NotInContactError(const std::string& what) : std::runtime_error(what) {}
};

// Integration or evaluation produced NaN/inf.
struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

// A task-space target left the arm workspace.
struct UnreachableError : std::runtime_error {
  explicit UnreachableError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace trayctl
