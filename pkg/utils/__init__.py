# Ambient services: configuration, logging and error reporting
