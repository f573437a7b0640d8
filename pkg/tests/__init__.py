# Makes tests a package
