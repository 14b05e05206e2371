# Test package for backend unit tests.
