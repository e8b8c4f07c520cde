# Model definitions, parameter storage and run registry module
