#  ______   __   __    __   __  __   ______   ______
# /\  ___\ /\ \ /\ "-./  \ /\ \_\ \ /\  == \ /\  __ \
# \ \___  \\ \ \\ \ \-./\ \\ \  __ \\ \  __< \ \  __ \
#  \/\_____\\ \_\\ \_\ \ \_\\ \_\ \_\\ \_\ \_\\ \_\ \_\
#   \/_____/ \/_/ \/_/  \/_/ \/_/\/_/ \/_/ /_/ \/_/\/_/
__version__ = "0.1.0"
