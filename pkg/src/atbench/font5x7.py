# 5x7 bitmap glyphs, one string of 5 columns per row, "#" = ink.
GLYPHS = {
    "a": [" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"],
    "b": ["#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "],
    "c": [" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "],
    "d": ["###  ", "#  # ", "#   #", "#   #", "#   #", "#  # ", "###  "],
    "e": ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"],
    "f": ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "],
    "g": [" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"],
    "h": ["#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"],
    "i": [" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    "j": ["  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "],
    "k": ["#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"],
    "l": ["#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"],
    "m": ["#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"],
    "n": ["#   #", "#   #", "##  #", "# # #", "#  ##", "#   #", "#   #"],
    "o": [" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "],
    "p": ["#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "],
    "q": [" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"],
    "r": ["#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"],
    "s": [" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "],
    "t": ["#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "],
    "u": ["#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "],
    "v": ["#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "],
    "w": ["#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "],
    "x": ["#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"],
    "y": ["#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "],
    "z": ["#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"],
    "0": [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    "1": ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    "2": [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    "3": ["#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "],
    "4": ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    "5": ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    "6": ["  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "],
    "7": ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    "8": [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    "9": [" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "],
}
