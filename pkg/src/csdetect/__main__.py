from csdetect.cli import main

main()
