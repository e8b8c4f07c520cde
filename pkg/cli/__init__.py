# Command handlers module
